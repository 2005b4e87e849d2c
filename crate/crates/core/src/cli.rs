//! The `entex` command line: extract, evaluate, agree, distill, synth, ablate.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{self, Annotation, Interview, SyntheticProfile};
use crate::distill::{self, DEFAULT_ALIGN_THRESHOLD};
use crate::eval::{self, EvalReport, DEFAULT_THRESHOLD};
use crate::gateway::{
    run_corpus, Backoff, EndpointConfig, Gateway, GenerationConfig, HttpBackend, InterviewFailure, MockBackend,
    Pricing, RunReport,
};
use crate::prompt::{Language, PromptConfig};
use crate::response::{self, ExtractionResult};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub extractions: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// A run configuration file. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// Gold annotations; required by the mock endpoint and by `ablate`.
    pub gold: Option<PathBuf>,
    pub max_records: Option<usize>,
    pub endpoint: EndpointConfig,
    pub prompt: PromptConfig,
    pub generation: GenerationConfig,
    pub parallelism: usize,
    pub output: OutputPaths,
    pub eval_threshold: f64,
    pub align_threshold: f64,
    pub pricing: Pricing,
    pub retry_base_ms: u64,
    pub retry_cap_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            gold: None,
            max_records: None,
            endpoint: EndpointConfig::default(),
            prompt: PromptConfig::default(),
            generation: GenerationConfig::default(),
            parallelism: 1,
            output: OutputPaths::default(),
            eval_threshold: DEFAULT_THRESHOLD,
            align_threshold: DEFAULT_ALIGN_THRESHOLD,
            pricing: Pricing::default(),
            retry_base_ms: 1000,
            retry_cap_ms: 60_000,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.corpus);
        resolve(&mut config.gold);
        resolve(&mut config.output.extractions);
        resolve(&mut config.output.report);
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        for (name, t) in [("eval_threshold", self.eval_threshold), ("align_threshold", self.align_threshold)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(usage(format!("{name} must be in [0, 1], got {t}")));
            }
        }
        if self.parallelism == 0 {
            return Err(usage("parallelism must be at least 1"));
        }
        self.prompt.validate().map_err(|e| usage(e.to_string()))?;
        self.generation.validate().map_err(|e| usage(e.to_string()))?;
        if let EndpointConfig::Mock(m) = &self.endpoint {
            m.validate().map_err(|e| usage(e.to_string()))?;
        }
        for (name, p) in [("corpus", &self.corpus), ("gold", &self.gold)] {
            if let Some(p) = p.as_ref().filter(|p| !p.is_file()) {
                return Err(usage(format!("{name} file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Sets the seed of every mock error profile.
    pub fn set_seed(&mut self, seed: u64) {
        if let EndpointConfig::Mock(m) = &mut self.endpoint {
            m.profile.seed = seed;
            for p in m.language_overrides.values_mut() {
                p.seed = seed;
            }
        }
    }

    fn corpus_path(&self) -> CliResult<&Path> {
        self.corpus.as_deref().ok_or_else(|| usage("config names no corpus"))
    }

    fn load_inputs(&self) -> CliResult<(Vec<Interview>, Option<Vec<Annotation>>)> {
        let interviews = corpus::load_corpus(self.corpus_path()?, self.max_records).context("loading corpus")?;
        let gold = match &self.gold {
            Some(p) => Some(corpus::load_annotations(p).context("loading gold annotations")?),
            None => None,
        };
        Ok((interviews, gold))
    }

    pub fn gateway(&self, interviews: &[Interview], gold: Option<&[Annotation]>) -> CliResult<Gateway> {
        let gateway = match &self.endpoint {
            EndpointConfig::Http(h) => Gateway::new(HttpBackend::new(h.clone())),
            EndpointConfig::Mock(m) => {
                let gold = gold.ok_or_else(|| usage("the mock endpoint needs `gold` annotations"))?;
                Gateway::new(MockBackend::new(m.clone(), interviews, gold).map_err(|e| usage(e.to_string()))?)
            }
        };
        let backoff = Backoff {
            base: Duration::from_millis(self.retry_base_ms),
            cap: Duration::from_millis(self.retry_cap_ms),
        };
        Ok(gateway.with_backoff(backoff).with_pricing(self.pricing))
    }
}

#[derive(Debug, Parser)]
#[command(name = "entex", version, about = "Hobby and organization extraction from interview texts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the corpus through the configured endpoint and write extractions.
    Extract(ExtractArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Agreement between two annotation files.
    Agree(AgreeArgs),
    /// Align extractions to their texts and write an IOB dataset.
    Distill(DistillArgs),
    /// Generate a synthetic corpus with gold annotations.
    Synth(SynthArgs),
    /// Evaluate a grid of batch sizes and prompt languages.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Extraction output file; overrides the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// JSONL extractions, or CoNLL tagger output (`.conll`/`.tsv`).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Write the full JSON report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub extractions: PathBuf,
    /// CoNLL output file.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALIGN_THRESHOLD)]
    pub threshold: f64,
    /// Discard report; defaults to `<output>.discards.jsonl`.
    #[arg(long)]
    pub discards: Option<PathBuf>,
    /// Nested learning-curve subset sizes, e.g. `500,3000`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON generator profile; defaults are used for missing fields.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Corpus output file.
    #[arg(long)]
    pub output: PathBuf,
    /// Gold output file; defaults to `<output stem>.gold.jsonl`.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub languages: Vec<Language>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write the rows as JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtractOutcome {
    pub report: RunReport,
    pub failures: Vec<InterviewFailure>,
    #[serde(skip)]
    pub extractions: Vec<ExtractionResult>,
}

/// Runs extraction and writes the extraction and report files.
pub fn cmd_extract(config: &RunConfig) -> CliResult<ExtractOutcome> {
    config.validate()?;
    let out = config.output.extractions.clone().ok_or_else(|| usage("no extraction output path given"))?;
    let (interviews, gold) = config.load_inputs()?;
    let gateway = config.gateway(&interviews, gold.as_deref())?;
    let (results, report) = run_corpus(&gateway, &interviews, &config.prompt, &config.generation, config.parallelism)
        .map_err(|e| usage(e.to_string()))?;
    let (mut extractions, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(x) => extractions.push(x),
            Err(f) => failures.push(f),
        }
    }
    response::write_extractions(&out, &extractions).context("writing extractions")?;
    let outcome = ExtractOutcome { report, failures, extractions };
    let report_path = config.output.report.clone().unwrap_or_else(|| with_suffix(&out, ".report.json"));
    write_json(&report_path, &outcome)?;
    Ok(outcome)
}

fn load_predictions(path: &Path) -> anyhow::Result<Vec<ExtractionResult>> {
    let conll = matches!(path.extension().and_then(|e| e.to_str()), Some("conll" | "tsv"));
    if !conll {
        return Ok(response::load_extractions(path)?);
    }
    distill::read_conll_file(path)?
        .iter()
        .map(|d| distill::spans_to_entities(d).with_context(|| format!("document `{}`", d.interview_id)))
        .collect()
}

pub fn cmd_evaluate(gold: &Path, pred: &Path, threshold: f64) -> CliResult<EvalReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let gold = corpus::load_annotations(gold).context("loading gold")?;
    let pred = load_predictions(pred).context("loading predictions")?;
    Ok(eval::evaluate_corpus(&gold, &pred, threshold).context("evaluating")?)
}

pub fn cmd_agree(a: &Path, b: &Path, threshold: f64) -> CliResult<Option<f64>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let a = corpus::load_annotations(a).context("loading first annotation file")?;
    let b = corpus::load_annotations(b).context("loading second annotation file")?;
    Ok(eval::agreement(&a, &b, threshold).context("computing agreement")?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistillSummary {
    pub documents: usize,
    pub aligned: usize,
    pub discarded: usize,
    pub subsets: Vec<(usize, PathBuf)>,
}

pub fn cmd_distill(args: &DistillArgs) -> CliResult<DistillSummary> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(usage(format!("threshold must be in [0, 1], got {}", args.threshold)));
    }
    let interviews = corpus::load_corpus(&args.corpus, None).context("loading corpus")?;
    let extractions = response::load_extractions(&args.extractions).context("loading extractions")?;
    let out = distill::build_iob_dataset(&interviews, &extractions, args.threshold).context("aligning")?;
    distill::validate_dataset(&out.documents, &interviews).context("validating IOB output")?;
    distill::write_conll_file(&args.output, &out.documents).context("writing CoNLL")?;
    let discards_path = args.discards.clone().unwrap_or_else(|| with_suffix(&args.output, ".discards.jsonl"));
    let mut text = String::new();
    for d in &out.discards {
        text.push_str(&serde_json::to_string(d).context("serializing discard")?);
        text.push('\n');
    }
    fs::write(&discards_path, text).with_context(|| format!("writing {}", discards_path.display()))?;
    let mut subsets = Vec::new();
    if !args.sizes.is_empty() {
        let splits = distill::split_learning_curve(&out.documents, &args.sizes, args.seed)
            .map_err(|e| usage(e.to_string()))?;
        let stem = args.output.with_extension("");
        let ext = args.output.extension().and_then(|e| e.to_str()).unwrap_or("conll");
        for (n, docs) in splits {
            let path = with_suffix(&stem, &format!(".{n}.{ext}"));
            distill::write_conll_file(&path, &docs).context("writing learning-curve subset")?;
            subsets.push((n, path));
        }
    }
    Ok(DistillSummary { documents: out.documents.len(), aligned: out.aligned(), discarded: out.discards.len(), subsets })
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<PathBuf> {
    let mut profile = match &args.profile {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read profile {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid profile {}: {e}", p.display())))?
        }
        None => SyntheticProfile::default(),
    };
    if let Some(seed) = args.seed {
        profile.seed = seed;
    }
    profile.validate().map_err(|e| usage(e.to_string()))?;
    let pairs = corpus::generate_synthetic_corpus(&profile, args.n).map_err(|e| usage(e.to_string()))?;
    let (interviews, gold): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let gold_path = args.gold.clone().unwrap_or_else(|| with_suffix(&args.output.with_extension(""), ".gold.jsonl"));
    corpus::write_corpus(&args.output, &interviews).context("writing corpus")?;
    corpus::write_annotations(&gold_path, &gold).context("writing gold")?;
    Ok(gold_path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub batch_size: usize,
    pub language: Language,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub failed: usize,
    pub requests: u64,
}

/// One evaluated run per grid cell, sorted by descending F.
pub fn cmd_ablate(config: &RunConfig, batch_sizes: &[usize], languages: &[Language]) -> CliResult<Vec<AblationRow>> {
    if batch_sizes.is_empty() || languages.is_empty() {
        return Err(usage("the ablation grid needs at least one batch size and one language"));
    }
    config.validate()?;
    let (interviews, gold) = config.load_inputs()?;
    let gold = gold.ok_or_else(|| usage("ablation needs `gold` annotations"))?;
    let gateway = config.gateway(&interviews, Some(&gold))?;
    let mut rows = Vec::new();
    for &language in languages {
        for &batch_size in batch_sizes {
            let prompt = config.prompt.with_language(language).with_batch_size(batch_size);
            prompt.validate().map_err(|e| usage(e.to_string()))?;
            let (results, report) = run_corpus(&gateway, &interviews, &prompt, &config.generation, config.parallelism)
                .map_err(|e| usage(e.to_string()))?;
            let pred: Vec<ExtractionResult> = results.into_iter().filter_map(Result::ok).collect();
            let scores = eval::evaluate_corpus(&gold, &pred, config.eval_threshold).context("evaluating")?.overall;
            rows.push(AblationRow {
                batch_size,
                language,
                precision: scores.precision,
                recall: scores.recall,
                f1: scores.f1,
                failed: report.failed,
                requests: report.requests,
            });
        }
    }
    rows.sort_by(|a, b| b.f1.unwrap_or(-1.0).total_cmp(&a.f1.unwrap_or(-1.0)));
    Ok(rows)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.1}"))
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:>5} {:<8} {:>7} {:>7} {:>7} {:>7}\n", "batch", "language", "P", "R", "F", "failed");
    for r in rows {
        out.push_str(&format!(
            "{:>5} {:<8} {:>7} {:>7} {:>7} {:>7}\n",
            r.batch_size,
            r.language,
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            r.failed
        ));
    }
    out
}

fn load_config(path: &Path, seed: Option<u64>, parallelism: Option<usize>) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.set_seed(seed);
    }
    if let Some(p) = parallelism {
        config.parallelism = p;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Extract(a) => {
            let mut config = load_config(&a.config, a.seed, a.parallelism)?;
            if let Some(out) = a.output {
                config.output.extractions = Some(out);
            }
            let outcome = cmd_extract(&config)?;
            let r = &outcome.report;
            println!(
                "{} interviews: {} extracted, {} failed, {} requests, {} fallback, est. cost {:.2}",
                r.interviews, r.succeeded, r.failed, r.requests, r.fallback_used, r.estimated_cost
            );
            if r.interviews > 0 && r.succeeded == 0 {
                return Err(anyhow::anyhow!("every interview failed").into());
            }
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a.gold, &a.pred, a.threshold)?;
            print!("{}", report.summary_table());
            let o = &report.overall;
            println!("P {} / R {} / F {}", pct(o.precision), pct(o.recall), pct(o.f1));
            if let Some(path) = &a.output {
                write_json(path, &report)?;
            }
        }
        Command::Agree(a) => {
            let f = cmd_agree(&a.a, &a.b, a.threshold)?;
            println!("agreement F {}", pct(f));
        }
        Command::Distill(a) => {
            let s = cmd_distill(&a)?;
            println!("{} documents, {} entities aligned, {} discarded", s.documents, s.aligned, s.discarded);
            for (n, path) in &s.subsets {
                println!("subset {n}: {}", path.display());
            }
        }
        Command::Synth(a) => {
            let gold = cmd_synth(&a)?;
            println!("wrote {} interviews to {} and gold to {}", a.n, a.output.display(), gold.display());
        }
        Command::Ablate(a) => {
            let mut config = load_config(&a.config, a.seed, a.parallelism)?;
            if let Some(t) = a.threshold {
                config.eval_threshold = t;
            }
            let rows = cmd_ablate(&config, &a.batch_sizes, &a.languages)?;
            print!("{}", ablation_table(&rows));
            if let Some(path) = &a.output {
                write_json(path, &json!({ "rows": rows }))?;
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

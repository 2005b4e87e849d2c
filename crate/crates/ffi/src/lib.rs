//! C interface to the entex core.
//!
//! Functions return an [`EntexStatus`]; on failure a message is available from
//! [`entex_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their matching `_free` function. Offsets are in
//! Unicode scalar values, not bytes.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use entex::corpus::FieldCategory;
use entex::distill::AlignmentText;
use entex::eval::{self, EvalReport, Scores};
use entex::response::{parse_response, Expected};
use libc::c_char;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntexStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    FormatError = 4,
    IoError = 5,
    NotFound = 6,
    Panic = 7,
}

pub const ENTEX_PERSON_HOBBY: u32 = 0;
pub const ENTEX_PERSON_ORG: u32 = 1;
pub const ENTEX_SPOUSE_HOBBY: u32 = 2;
pub const ENTEX_SPOUSE_ORG: u32 = 3;
/// Category selector for corpus-level scores.
pub const ENTEX_OVERALL: u32 = 4;

/// Parsed entities of one interview.
pub struct EntexExtraction {
    cells: [Vec<CString>; 4],
}

/// An evaluation report.
pub struct EntexReport {
    report: EvalReport,
}

/// Counts and percentages; undefined percentages are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EntexScores {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&Scores> for EntexScores {
    fn from(s: &Scores) -> Self {
        EntexScores {
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
            precision: s.precision.unwrap_or(f64::NAN),
            recall: s.recall.unwrap_or(f64::NAN),
            f1: s.f1.unwrap_or(f64::NAN),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (EntexStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EntexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EntexStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EntexStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((EntexStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (EntexStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

/// # Safety
/// `p` is null or valid for a write of `T`.
unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| (EntexStatus::NullArgument, format!("`{name}` is null")))
}

fn category(c: u32) -> Result<FieldCategory, Failure> {
    FieldCategory::ALL
        .get(c as usize)
        .copied()
        .ok_or_else(|| (EntexStatus::InvalidArgument, format!("unknown category {c}")))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn entex_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Indel similarity of two strings after case folding, in [0, 1].
///
/// # Safety
/// `a` and `b` are NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn entex_indel_similarity(a: *const c_char, b: *const c_char, out: *mut f64) -> EntexStatus {
    guard(|| {
        let (a, b) = (str_arg(a, "a")?, str_arg(b, "b")?);
        *out_arg(out, "out")? = eval::indel_similarity(a, b);
        Ok(())
    })
}

/// Parses a response for one interview. `spouse_name` may be null.
///
/// # Safety
/// String arguments are NUL-terminated; `out` is writable. On success `*out`
/// holds a handle to release with [`entex_extraction_free`].
#[no_mangle]
pub unsafe extern "C" fn entex_parse_response(
    text: *const c_char,
    interview_id: *const c_char,
    primary_name: *const c_char,
    spouse_name: *const c_char,
    out: *mut *mut EntexExtraction,
) -> EntexStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let expected = Expected {
            interview_id: str_arg(interview_id, "interview_id")?.to_owned(),
            primary_name: str_arg(primary_name, "primary_name")?.to_owned(),
            spouse_name: if spouse_name.is_null() { None } else { Some(str_arg(spouse_name, "spouse_name")?.to_owned()) },
        };
        let mut results = parse_response(str_arg(text, "text")?, std::slice::from_ref(&expected))
            .map_err(|e| (EntexStatus::FormatError, format!("interview `{}`: {e}", expected.interview_id)))?;
        let result = results.pop().expect("one interview expected");
        let mut cells: [Vec<CString>; 4] = Default::default();
        for (cat, list) in result.entities.iter() {
            cells[cat.index()] = list
                .iter()
                .map(|s| CString::new(s.as_str()).map_err(|_| (EntexStatus::InvalidUtf8, "entity contains NUL".into())))
                .collect::<Result<_, _>>()?;
        }
        *out = Box::into_raw(Box::new(EntexExtraction { cells }));
        Ok(())
    })
}

/// Number of entities in `category`; 0 for a null handle or unknown category.
///
/// # Safety
/// `x` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn entex_extraction_count(x: *const EntexExtraction, category: u32) -> usize {
    match (x.as_ref(), self::category(category)) {
        (Some(x), Ok(c)) => x.cells[c.index()].len(),
        _ => 0,
    }
}

/// Entity `index` of `category`, borrowed from the handle; null if out of range.
///
/// # Safety
/// `x` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn entex_extraction_entity(x: *const EntexExtraction, category: u32, index: usize) -> *const c_char {
    let (Some(x), Ok(c)) = (x.as_ref(), self::category(category)) else { return ptr::null() };
    x.cells[c.index()].get(index).map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `x` is null or a handle from [`entex_parse_response`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn entex_extraction_free(x: *mut EntexExtraction) {
    if !x.is_null() {
        drop(Box::from_raw(x));
    }
}

/// Locates `entity` in `text` by approximate matching on token boundaries.
/// Returns `ENTEX_STATUS_NOT_FOUND` when no span reaches `threshold`.
///
/// # Safety
/// `text` and `entity` are NUL-terminated; the out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn entex_align_entity(
    text: *const c_char,
    entity: *const c_char,
    threshold: f64,
    start: *mut usize,
    end: *mut usize,
    similarity: *mut f64,
) -> EntexStatus {
    guard(|| {
        let (text, entity) = (str_arg(text, "text")?, str_arg(entity, "entity")?);
        let (start, end, similarity) = (out_arg(start, "start")?, out_arg(end, "end")?, out_arg(similarity, "similarity")?);
        if !(0.0..=1.0).contains(&threshold) {
            return Err((EntexStatus::InvalidArgument, format!("threshold {threshold} outside [0, 1]")));
        }
        let a = AlignmentText::new(text)
            .best_alignment(entity, &[])
            .filter(|a| a.similarity >= threshold)
            .ok_or_else(|| (EntexStatus::NotFound, format!("no span of similarity >= {threshold}")))?;
        (*start, *end, *similarity) = (a.start, a.end, a.similarity);
        Ok(())
    })
}

/// Evaluates a prediction file against a gold file, both JSONL.
///
/// # Safety
/// Paths are NUL-terminated; `out` is writable. On success `*out` holds a
/// handle to release with [`entex_report_free`].
#[no_mangle]
pub unsafe extern "C" fn entex_evaluate_files(
    gold_path: *const c_char,
    pred_path: *const c_char,
    threshold: f64,
    out: *mut *mut EntexReport,
) -> EntexStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let io = |e: entex::corpus::CorpusError| (EntexStatus::IoError, e.to_string());
        let gold = entex::corpus::load_annotations(Path::new(str_arg(gold_path, "gold_path")?)).map_err(io)?;
        let pred = entex::response::load_extractions(Path::new(str_arg(pred_path, "pred_path")?)).map_err(io)?;
        let report = eval::evaluate_corpus(&gold, &pred, threshold)
            .map_err(|e| (EntexStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(EntexReport { report }));
        Ok(())
    })
}

/// Scores for one category, or the corpus with `ENTEX_OVERALL`.
///
/// # Safety
/// `r` is null or a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn entex_report_scores(r: *const EntexReport, category: u32, out: *mut EntexScores) -> EntexStatus {
    guard(|| {
        let r = r.as_ref().ok_or((EntexStatus::NullArgument, "`report` is null".into()))?;
        let out = out_arg(out, "out")?;
        let scores = if category == ENTEX_OVERALL { &r.report.overall } else { r.report.category(self::category(category)?) };
        *out = scores.into();
        Ok(())
    })
}

/// The report as JSON; release with [`entex_string_free`]. Null on failure.
///
/// # Safety
/// `r` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn entex_report_to_json(r: *const EntexReport) -> *mut c_char {
    let mut s = ptr::null_mut();
    guard(|| {
        let r = r.as_ref().ok_or((EntexStatus::NullArgument, "`report` is null".into()))?;
        let json = serde_json::to_string(&r.report).map_err(|e| (EntexStatus::InvalidArgument, e.to_string()))?;
        s = CString::new(json).map_err(|e| (EntexStatus::InvalidArgument, e.to_string()))?.into_raw();
        Ok(())
    });
    s
}

/// # Safety
/// `r` is null or a handle from [`entex_evaluate_files`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn entex_report_free(r: *mut EntexReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn entex_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

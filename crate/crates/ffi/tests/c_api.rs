use std::ffi::{CStr, CString};
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::ptr;

use entex_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = entex_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn similarity() {
    let mut out = -1.0;
    let status = unsafe { entex_indel_similarity(c("Kalastus").as_ptr(), c("kalastusta").as_ptr(), &mut out) };
    assert_eq!(status, EntexStatus::Ok);
    assert!((out - (1.0 - 2.0 / 18.0)).abs() < 1e-12);
    assert!(entex_last_error_message().is_null());
    let status = unsafe { entex_indel_similarity(ptr::null(), c("a").as_ptr(), &mut out) };
    assert_eq!(status, EntexStatus::NullArgument);
    assert!(last_error().contains("`a`"));
    let bad = [0xffu8 as libc::c_char, 0];
    assert_eq!(unsafe { entex_indel_similarity(bad.as_ptr(), c("a").as_ptr(), &mut out) }, EntexStatus::InvalidUtf8);
}

#[test]
fn parse_and_read_extraction() {
    let text = c("PersonName: A\nPersonHobbies: hunting, fishing\nPersonSocialOrgs: none\n\
                  SpouseName: B\nSpouseHobbies: handcrafts\nSpouseSocialOrgs: ---\n");
    let mut x = ptr::null_mut();
    let status =
        unsafe { entex_parse_response(text.as_ptr(), c("i1").as_ptr(), c("A").as_ptr(), c("B").as_ptr(), &mut x) };
    assert_eq!(status, EntexStatus::Ok);
    unsafe {
        assert_eq!(entex_extraction_count(x, ENTEX_PERSON_HOBBY), 2);
        assert_eq!(entex_extraction_count(x, ENTEX_PERSON_ORG), 0);
        assert_eq!(entex_extraction_count(x, ENTEX_SPOUSE_HOBBY), 1);
        assert_eq!(entex_extraction_count(x, 99), 0);
        let e = entex_extraction_entity(x, ENTEX_PERSON_HOBBY, 1);
        assert_eq!(CStr::from_ptr(e).to_str().unwrap(), "fishing");
        assert!(entex_extraction_entity(x, ENTEX_PERSON_HOBBY, 2).is_null());
        entex_extraction_free(x);
        entex_extraction_free(ptr::null_mut());
    }
}

#[test]
fn parse_format_error() {
    let mut x = ptr::null_mut();
    let status = unsafe {
        entex_parse_response(c("Sure! Here is a script.").as_ptr(), c("i1").as_ptr(), c("A").as_ptr(), ptr::null(), &mut x)
    };
    assert_eq!(status, EntexStatus::FormatError);
    assert!(x.is_null());
    assert!(last_error().contains("i1"));
}

#[test]
fn align() {
    let text = c("Rouva toimii Lopen Kuparsaaren marttayhdistyksen sihteerinä.");
    let (mut s, mut e, mut sim) = (0usize, 0usize, 0.0f64);
    let status = unsafe {
        entex_align_entity(text.as_ptr(), c("Lopen Kuparsaaren marttayhdistys").as_ptr(), 0.6, &mut s, &mut e, &mut sim)
    };
    assert_eq!(status, EntexStatus::Ok);
    assert_eq!((s, e), (13, 48));
    assert!((sim - (1.0 - 3.0 / 32.0)).abs() < 1e-12);
    let status = unsafe { entex_align_entity(text.as_ptr(), c("jääkiekko").as_ptr(), 0.6, &mut s, &mut e, &mut sim) };
    assert_eq!(status, EntexStatus::NotFound);
    let status = unsafe { entex_align_entity(text.as_ptr(), c("x").as_ptr(), 1.5, &mut s, &mut e, &mut sim) };
    assert_eq!(status, EntexStatus::InvalidArgument);
}

fn write(path: &Path, lines: &[&str]) {
    let mut f = std::fs::File::create(path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
}

#[test]
fn evaluate_files() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    write(&gold, &[r#"{"interview_id":"a","person_hobbies":["kalastus","hiihto"],"spouse_orgs":["Lotta Svärd"]}"#]);
    write(&pred, &[r#"{"interview_id":"a","person_hobbies":["kalastusta","shakki"],"spouse_orgs":["Lotta Svärd"]}"#]);
    let mut r = ptr::null_mut();
    let status =
        unsafe { entex_evaluate_files(c(gold.to_str().unwrap()).as_ptr(), c(pred.to_str().unwrap()).as_ptr(), 0.75, &mut r) };
    assert_eq!(status, EntexStatus::Ok);
    let mut s = EntexScores::default();
    unsafe {
        assert_eq!(entex_report_scores(r, ENTEX_OVERALL, &mut s), EntexStatus::Ok);
        assert_eq!((s.tp, s.fp, s.fn_), (2, 1, 1));
        assert_eq!(entex_report_scores(r, ENTEX_PERSON_ORG, &mut s), EntexStatus::Ok);
        assert_eq!((s.tp, s.fp, s.fn_), (0, 0, 0));
        assert!(s.f1.is_nan());
        assert_eq!(entex_report_scores(r, 17, &mut s), EntexStatus::InvalidArgument);
        let json = entex_report_to_json(r);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(v["overall"]["tp"], 2);
        entex_string_free(json);
        entex_report_free(r);
    }
    let missing = dir.path().join("missing.jsonl");
    let status = unsafe {
        entex_evaluate_files(c(gold.to_str().unwrap()).as_ptr(), c(missing.to_str().unwrap()).as_ptr(), 0.75, &mut r)
    };
    assert_eq!(status, EntexStatus::IoError);
    assert!(r.is_null());
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/entex.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["entex_indel_similarity", "entex_parse_response", "entex_align_entity", "entex_evaluate_files", "entex_last_error_message"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"entex.h\"\nint main(void) { double s; EntexStatus st = entex_indel_similarity(\"a\", \"b\", &s);\n\
         EntexReport *r = NULL; entex_report_free(r); return st == ENTEX_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    for extra in [&["-std=c99"][..], &["-x", "c++"][..]] {
        let out = Command::new(&cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
            .arg(header.parent().unwrap())
            .args(extra)
            .arg(&src)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_owned());
        }
    }
    Err(())
}

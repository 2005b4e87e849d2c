//! Fuzzy entity-level evaluation.
//!
//! Entities are compared with normalized indel similarity,
//! `1 - (|a| + |b| - 2·LCS(a, b)) / (|a| + |b|)`, over NFC case-folded
//! characters. Within each (interview, category) cell predictions are paired
//! with gold entities greedily, highest similarity first, and only pairs at or
//! above the threshold count as true positives. Scores are micro-averaged
//! percentages over the aggregated counts.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Annotation, Entities, FieldCategory};
use crate::response::ExtractionResult;
use crate::text::fold;

pub const DEFAULT_THRESHOLD: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction for unknown interview `{0}`")]
    UnknownInterview(String),
    #[error("duplicate interview `{0}`")]
    DuplicateInterview(String),
    #[error("threshold must be in [0, 1], got {0}")]
    Threshold(f64),
    #[error("interview id sets differ: {only_a} only in first, {only_b} only in second")]
    IdSetMismatch { only_a: usize, only_b: usize },
}

fn folded_chars(s: &str) -> Vec<char> {
    if s.is_ascii() {
        return s.bytes().map(|b| char::from(b.to_ascii_lowercase())).collect();
    }
    fold(s).chars().collect()
}

/// Length of the longest common subsequence.
///
/// Bit-parallel over the shorter string when it fits one machine word,
/// row-by-row dynamic programming otherwise.
pub fn lcs_len(a: &[char], b: &[char]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    if short.len() <= 64 {
        lcs_bit_parallel(short, long)
    } else {
        lcs_rows(short, long)
    }
}

fn lcs_bit_parallel(short: &[char], long: &[char]) -> usize {
    let mut peq: Vec<(char, u64)> = Vec::with_capacity(short.len());
    for (i, &c) in short.iter().enumerate() {
        match peq.iter_mut().find(|(p, _)| *p == c) {
            Some((_, mask)) => *mask |= 1 << i,
            None => peq.push((c, 1 << i)),
        }
    }
    let width = short.len();
    let live = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
    let mut v = u64::MAX;
    for &c in long {
        let Some(&(_, m)) = peq.iter().find(|(p, _)| *p == c) else { continue };
        let u = v & m;
        v = v.wrapping_add(u) | (v - u);
    }
    (!v & live).count_ones() as usize
}

fn lcs_rows(short: &[char], long: &[char]) -> usize {
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for &c in long {
        for (j, &s) in short.iter().enumerate() {
            cur[j + 1] = if s == c { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

fn similarity_of(a: &[char], b: &[char]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let distance = total - 2 * lcs_len(a, b);
    1.0 - distance as f64 / total as f64
}

/// Normalized indel similarity in `[0, 1]`; `1.0` for two empty strings.
pub fn indel_similarity(a: &str, b: &str) -> f64 {
    similarity_of(&folded_chars(a), &folded_chars(b))
}

/// Indel distance, `|a| + |b| - 2·LCS`, over folded characters.
pub fn indel_distance(a: &str, b: &str) -> usize {
    let (a, b) = (folded_chars(a), folded_chars(b));
    a.len() + b.len() - 2 * lcs_len(&a, &b)
}

/// Result of pairing one cell's gold and predicted lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldMatch {
    /// `(gold index, predicted index, similarity)` in acceptance order.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Unmatched predictions.
    pub false_positives: Vec<usize>,
    /// Unmatched gold entities.
    pub false_negatives: Vec<usize>,
}

/// Greedy highest-similarity-first pairing; ties go to the lower gold index,
/// then the lower predicted index.
pub fn match_fields<S: AsRef<str>>(gold: &[S], pred: &[S], threshold: f64) -> FieldMatch {
    let g: Vec<Vec<char>> = gold.iter().map(|s| folded_chars(s.as_ref())).collect();
    let p: Vec<Vec<char>> = pred.iter().map(|s| folded_chars(s.as_ref())).collect();
    let mut candidates = Vec::new();
    for (gi, ga) in g.iter().enumerate() {
        for (pi, pa) in p.iter().enumerate() {
            let s = similarity_of(ga, pa);
            if s >= threshold {
                candidates.push((gi, pi, s));
            }
        }
    }
    candidates.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut gold_used = vec![false; g.len()];
    let mut pred_used = vec![false; p.len()];
    let mut pairs = Vec::new();
    for (gi, pi, s) in candidates {
        if !gold_used[gi] && !pred_used[pi] {
            gold_used[gi] = true;
            pred_used[pi] = true;
            pairs.push((gi, pi, s));
        }
    }
    FieldMatch {
        pairs,
        false_positives: (0..p.len()).filter(|&i| !pred_used[i]).collect(),
        false_negatives: (0..g.len()).filter(|&i| !gold_used[i]).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub interview_id: String,
    pub category: FieldCategory,
    pub gold: String,
    pub predicted: String,
    pub similarity: f64,
}

/// Counts and micro scores; undefined ratios are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Scores {
        let ratio = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Scores { tp, fp, fn_, precision, recall, f1 }
    }

    fn add(self, other: Scores) -> Scores {
        Scores::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub category: FieldCategory,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub overall: Scores,
    pub per_category: Vec<CategoryScores>,
    /// Fraction of gold-empty cells also left empty; `None` when gold has none.
    pub empty_field_accuracy: Option<f64>,
    pub match_pairs: Vec<MatchPair>,
}

impl EvalReport {
    pub fn category(&self, c: FieldCategory) -> &Scores {
        &self.per_category[c.index()].scores
    }

    /// Plain-text table with one-decimal percentages.
    pub fn summary_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.1}"));
        let mut out = format!(
            "{:<16} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}\n",
            "category", "tp", "fp", "fn", "P", "R", "F"
        );
        let rows = self
            .per_category
            .iter()
            .map(|c| (c.category.file_key(), &c.scores))
            .chain(std::iter::once(("overall", &self.overall)));
        for (name, s) in rows {
            out.push_str(&format!(
                "{:<16} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}\n",
                name, s.tp, s.fp, s.fn_, fmt(s.precision), fmt(s.recall), fmt(s.f1)
            ));
        }
        out.push_str(&format!(
            "threshold {:.2}, empty-field accuracy {}\n",
            self.threshold,
            self.empty_field_accuracy.map_or_else(|| "n/a".to_owned(), |a| format!("{:.1}", 100.0 * a))
        ));
        out
    }
}

fn check_threshold(threshold: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(EvalError::Threshold(threshold))
    }
}

/// Predictions indexed by interview; missing interviews read as all-empty.
fn index_predictions<'a>(
    gold: &[Annotation],
    pred: &'a [ExtractionResult],
) -> Result<HashMap<&'a str, &'a Entities>, EvalError> {
    let gold_ids: HashSet<&str> = gold.iter().map(|a| a.interview_id.as_str()).collect();
    let mut by_id = HashMap::with_capacity(pred.len());
    for p in pred {
        if !gold_ids.contains(p.interview_id.as_str()) {
            return Err(EvalError::UnknownInterview(p.interview_id.clone()));
        }
        if by_id.insert(p.interview_id.as_str(), &p.entities).is_some() {
            return Err(EvalError::DuplicateInterview(p.interview_id.clone()));
        }
    }
    Ok(by_id)
}

pub fn evaluate_corpus(
    gold: &[Annotation],
    pred: &[ExtractionResult],
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    check_threshold(threshold)?;
    let by_id = index_predictions(gold, pred)?;
    let empty = Entities::new();
    let mut counts = [(0usize, 0usize, 0usize); 4];
    let mut match_pairs = Vec::new();
    let mut gold_empty = 0usize;
    let mut kept_empty = 0usize;
    let mut seen = HashSet::new();
    for a in gold {
        if !seen.insert(a.interview_id.as_str()) {
            return Err(EvalError::DuplicateInterview(a.interview_id.clone()));
        }
        let p = by_id.get(a.interview_id.as_str()).copied().unwrap_or(&empty);
        for cat in FieldCategory::ALL {
            let (g_list, p_list) = (&a.entities[cat], &p[cat]);
            if g_list.is_empty() {
                gold_empty += 1;
                kept_empty += usize::from(p_list.is_empty());
            }
            let m = match_fields(g_list, p_list, threshold);
            let c = &mut counts[cat.index()];
            c.0 += m.pairs.len();
            c.1 += m.false_positives.len();
            c.2 += m.false_negatives.len();
            match_pairs.extend(m.pairs.into_iter().map(|(gi, pi, s)| MatchPair {
                interview_id: a.interview_id.clone(),
                category: cat,
                gold: g_list[gi].clone(),
                predicted: p_list[pi].clone(),
                similarity: s,
            }));
        }
    }
    let per_category: Vec<CategoryScores> = FieldCategory::ALL
        .into_iter()
        .map(|cat| {
            let (tp, fp, fn_) = counts[cat.index()];
            CategoryScores { category: cat, scores: Scores::from_counts(tp, fp, fn_) }
        })
        .collect();
    let overall = per_category.iter().fold(Scores::from_counts(0, 0, 0), |acc, c| acc.add(c.scores));
    Ok(EvalReport {
        threshold,
        overall,
        per_category,
        empty_field_accuracy: (gold_empty > 0).then(|| kept_empty as f64 / gold_empty as f64),
        match_pairs,
    })
}

/// Fraction of gold-empty cells that the predictions also leave empty.
pub fn empty_field_accuracy(gold: &[Annotation], pred: &[ExtractionResult]) -> Result<Option<f64>, EvalError> {
    let by_id = index_predictions(gold, pred)?;
    let mut gold_empty = 0usize;
    let mut kept = 0usize;
    for a in gold {
        let p = by_id.get(a.interview_id.as_str());
        for cat in FieldCategory::ALL {
            if a.entities[cat].is_empty() {
                gold_empty += 1;
                kept += usize::from(p.is_none_or(|e| e[cat].is_empty()));
            }
        }
    }
    Ok((gold_empty > 0).then(|| kept as f64 / gold_empty as f64))
}

/// Micro F of `b` scored against `a`. Symmetric in its arguments.
pub fn agreement(a: &[Annotation], b: &[Annotation], threshold: f64) -> Result<Option<f64>, EvalError> {
    let ids_a: HashSet<&str> = a.iter().map(|x| x.interview_id.as_str()).collect();
    let ids_b: HashSet<&str> = b.iter().map(|x| x.interview_id.as_str()).collect();
    if ids_a != ids_b {
        return Err(EvalError::IdSetMismatch {
            only_a: ids_a.difference(&ids_b).count(),
            only_b: ids_b.difference(&ids_a).count(),
        });
    }
    let pred: Vec<ExtractionResult> = b.iter().cloned().map(ExtractionResult::from).collect();
    Ok(evaluate_corpus(a, &pred, threshold)?.overall.f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::Source;
    use FieldCategory::*;

    /// Indel distance by its own recurrence, no LCS.
    fn indel_oracle(a: &str, b: &str) -> f64 {
        let (a, b): (Vec<char>, Vec<char>) = (fold(a).chars().collect(), fold(b).chars().collect());
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 0..=a.len() {
            for j in 0..=b.len() {
                d[i][j] = match (i, j) {
                    (0, j) => j,
                    (i, 0) => i,
                    _ if a[i - 1] == b[j - 1] => d[i - 1][j - 1],
                    _ => 1 + d[i - 1][j].min(d[i][j - 1]),
                };
            }
        }
        let total = a.len() + b.len();
        if total == 0 { 1.0 } else { 1.0 - d[a.len()][b.len()] as f64 / total as f64 }
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(indel_similarity("fishing", "fishing"), 1.0);
        assert_eq!(indel_similarity("abc", ""), 0.0);
        assert_eq!(indel_similarity("", ""), 1.0);
        // Oracle: LCS = 14, |a| + |b| = 31.
        let s = indel_similarity("marttayhdistys", "marttayhdistyksen");
        assert_eq!(s, indel_oracle("marttayhdistys", "marttayhdistyksen"));
        assert!((s - (1.0 - 3.0 / 31.0)).abs() < 1e-12);
        assert_eq!(indel_distance("marttayhdistys", "marttayhdistyksen"), 3);
        assert_eq!(indel_similarity("FISHING", "fishing"), 1.0);
        assert_eq!(indel_similarity("ka\u{0308}si", "KÄSI"), 1.0);
    }

    #[test]
    fn long_strings_use_row_dp() {
        let a: String = "abcde".repeat(20);
        let b: String = "badce".repeat(19);
        assert_eq!(indel_similarity(&a, &b), indel_oracle(&a, &b));
        let c = "x".repeat(64);
        let d = format!("{c}y");
        assert_eq!(indel_similarity(&c, &d), indel_oracle(&c, &d));
    }

    #[test]
    fn match_examples() {
        let m = match_fields(&["fishing"], &["fishing"], 0.75);
        assert_eq!(m.pairs.len(), 1);
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());

        // LCS(fishing, hunting) = 4: 1 - 6/14.
        assert!((indel_similarity("fishing", "hunting") - 4.0 / 7.0).abs() < 1e-12);
        let m = match_fields(&["fishing"], &["hunting"], 0.75);
        assert!(m.pairs.is_empty());
        assert_eq!((m.false_positives.len(), m.false_negatives.len()), (1, 1));

        // LCS = 12 over 35 characters: 24/35, below 0.75 but above e.g. 0.6.
        let s = indel_similarity("theatre committee", "cultural committee");
        assert_eq!(s, indel_oracle("theatre committee", "cultural committee"));
        assert!((s - 24.0 / 35.0).abs() < 1e-12);
        assert!(match_fields(&["theatre committee"], &["cultural committee"], 0.75).pairs.is_empty());
        assert_eq!(match_fields(&["theatre committee"], &["cultural committee"], 0.6).pairs.len(), 1);
    }

    #[test]
    fn greedy_prefers_highest_then_lowest_index() {
        let m = match_fields(&["abcd", "abce"], &["abcd"], 0.5);
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
        assert_eq!(m.false_negatives, vec![1]);
        let m = match_fields(&["ab", "ab"], &["ab", "ab"], 0.5);
        assert_eq!(m.pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), [(0, 0), (1, 1)]);
    }

    fn ann(id: &str, cells: &[(FieldCategory, &[&str])]) -> Annotation {
        let mut e = Entities::new();
        for (c, l) in cells {
            e[*c] = l.iter().map(|s| s.to_string()).collect();
        }
        Annotation::new(id, e)
    }

    fn pred(a: &Annotation) -> ExtractionResult {
        ExtractionResult { source: Source::Model, ..a.clone().into() }
    }

    #[test]
    fn reference_counts_fixture() {
        let s = Scores::from_counts(669, 58, 82);
        assert_eq!(format!("{:.1}", s.precision.unwrap()), "92.0");
        assert_eq!(format!("{:.1}", s.recall.unwrap()), "89.1");
        assert_eq!(format!("{:.1}", s.f1.unwrap()), "90.5");
        // The pipeline behind the counts reports 90.4: within 0.2pp.
        assert!((s.f1.unwrap() - 90.4).abs() <= 0.2);
    }

    #[test]
    fn identical_and_empty_predictions() {
        let gold = vec![
            ann("1", &[(PersonHobby, &["kalastus", "hiihto"]), (SpouseOrg, &["Martat"])]),
            ann("2", &[(PersonOrg, &["Maamiesseura"])]),
        ];
        let same: Vec<_> = gold.iter().map(pred).collect();
        let r = evaluate_corpus(&gold, &same, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.overall.precision, Some(100.0));
        assert_eq!(r.overall.recall, Some(100.0));
        assert_eq!(r.overall.f1, Some(100.0));
        assert_eq!((r.overall.fp, r.overall.fn_), (0, 0));
        assert_eq!(r.empty_field_accuracy, Some(1.0));
        assert_eq!(r.match_pairs.len(), 4);

        let r = evaluate_corpus(&gold, &[], DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.overall.precision, None);
        assert_eq!(r.overall.recall, Some(0.0));
        assert_eq!(r.overall.f1, None);
        assert_eq!((r.overall.tp, r.overall.fn_), (0, 4));
        assert_eq!(r.category(PersonHobby).fn_, 2);
    }

    #[test]
    fn attribution_errors_count_twice() {
        let gold = vec![ann("1", &[(PersonHobby, &["kalastus"])])];
        let p = vec![pred(&ann("1", &[(SpouseHobby, &["kalastus"])]))];
        let r = evaluate_corpus(&gold, &p, DEFAULT_THRESHOLD).unwrap();
        assert_eq!((r.overall.tp, r.overall.fp, r.overall.fn_), (0, 1, 1));
    }

    #[test]
    fn unknown_prediction_id() {
        let gold = vec![ann("1", &[])];
        let p = vec![pred(&ann("2", &[]))];
        assert_eq!(
            evaluate_corpus(&gold, &p, 0.75).unwrap_err(),
            EvalError::UnknownInterview("2".into())
        );
        assert!(matches!(evaluate_corpus(&gold, &[], 1.5), Err(EvalError::Threshold(_))));
    }

    #[test]
    fn empty_field_accuracy_counts() {
        let gold = vec![ann("1", &[]), ann("2", &[(PersonHobby, &["a"]), (PersonOrg, &["b"]), (SpouseHobby, &["c"])])];
        // Cells empty in gold: 4 in "1", 1 in "2". One of "1"'s is filled.
        let p = vec![pred(&ann("1", &[(PersonOrg, &["x"])])), pred(&gold[1])];
        assert_eq!(empty_field_accuracy(&gold, &p).unwrap(), Some(4.0 / 5.0));

        let four = vec![ann("1", &[])];
        let p = vec![pred(&ann("1", &[(SpouseOrg, &["x"])]))];
        assert_eq!(empty_field_accuracy(&four, &p).unwrap(), Some(0.75));
        let full = vec![ann("1", &[(PersonHobby, &["a"]), (PersonOrg, &["b"]), (SpouseHobby, &["c"]), (SpouseOrg, &["d"])])];
        assert_eq!(empty_field_accuracy(&full, &[]).unwrap(), None);
    }

    #[test]
    fn agreement_cases() {
        let a = vec![ann("1", &[(PersonHobby, &["kalastus", "hiihto"])]), ann("2", &[(SpouseOrg, &["Martat"])])];
        assert_eq!(agreement(&a, &a, 0.3).unwrap(), Some(100.0));
        let b = vec![ann("1", &[(PersonHobby, &["kalastusta"])]), ann("2", &[(SpouseOrg, &["Marttakerho"])])];
        assert_eq!(agreement(&a, &b, 0.75).unwrap(), agreement(&b, &a, 0.75).unwrap());
        let disjoint = vec![ann("1", &[(PersonOrg, &["zzz"])]), ann("2", &[(PersonOrg, &["qqq"])])];
        assert_eq!(agreement(&a, &disjoint, 0.75).unwrap(), Some(0.0));
        let short = vec![ann("1", &[])];
        assert!(matches!(agreement(&a, &short, 0.75), Err(EvalError::IdSetMismatch { only_a: 1, only_b: 0 })));
    }

    #[test]
    fn summary_table_one_decimal() {
        let gold = vec![ann("1", &[(PersonHobby, &["kalastus"])])];
        let r = evaluate_corpus(&gold, &[pred(&gold[0])], 0.75).unwrap();
        let t = r.summary_table();
        assert!(t.contains("100.0"));
        assert!(t.lines().any(|l| l.starts_with("overall")));
    }

    /// Maximum cardinality bipartite matching (augmenting paths).
    fn max_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
        fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], right: &mut [Option<usize>]) -> bool {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    if right[v].is_none_or(|w| augment(w, adj, seen, right)) {
                        right[v] = Some(u);
                        return true;
                    }
                }
            }
            false
        }
        let mut right = vec![None; n_right];
        (0..adj.len()).filter(|&u| augment(u, adj, &mut vec![false; n_right], &mut right)).count()
    }

    #[test]
    fn greedy_close_to_optimal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let word = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
            (0..rng.random_range(2..7)).map(|_| ['a', 'b', 'c', 'd'][rng.random_range(0..4)]).collect()
        };
        let trials = 2000;
        let mut gaps = 0;
        for _ in 0..trials {
            let g: Vec<String> = (0..rng.random_range(0..=6)).map(|_| word(&mut rng)).collect();
            let p: Vec<String> = (0..rng.random_range(0..=6)).map(|_| word(&mut rng)).collect();
            let greedy = match_fields(&g, &p, 0.75).pairs.len();
            let adj: Vec<Vec<usize>> = g
                .iter()
                .map(|ga| (0..p.len()).filter(|&j| indel_similarity(ga, &p[j]) >= 0.75).collect())
                .collect();
            let best = max_matching(&adj, p.len());
            assert!(greedy <= best);
            if greedy < best {
                gaps += 1;
                eprintln!("greedy {greedy} < optimal {best}: gold {g:?} pred {p:?}");
            }
        }
        assert!(gaps as f64 / trials as f64 <= 0.01, "greedy suboptimal in {gaps}/{trials}");
    }

    proptest::proptest! {
        #[test]
        fn matches_oracle_on_unicode(a in "[aäAÄbB ]{0,12}", b in "[aäAÄbB ]{0,12}") {
            proptest::prop_assert_eq!(indel_similarity(&a, &b), indel_oracle(&a, &b));
        }

        #[test]
        fn conservation(
            g in proptest::collection::vec("[abc]{1,5}", 0..6),
            p in proptest::collection::vec("[abc]{1,5}", 0..6),
            t in 0.0f64..=1.0,
        ) {
            let m = match_fields(&g, &p, t);
            proptest::prop_assert_eq!(m.pairs.len() + m.false_negatives.len(), g.len());
            proptest::prop_assert_eq!(m.pairs.len() + m.false_positives.len(), p.len());
            for &(_, _, s) in &m.pairs {
                proptest::prop_assert!(s >= t);
            }
        }
    }
}

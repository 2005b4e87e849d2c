//! Interview corpora, gold annotations and the synthetic corpus generator.
//!
//! Both the corpus and the annotation files are line-delimited JSON, one record
//! per line. Text fields are normalized to NFC when read.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::ops::{Index, IndexMut};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::rng;
use crate::text::{fold, nfc, squash_whitespace};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate interview_id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown category `{key}`")]
    UnknownCategory { line: usize, key: String },
    #[error("invalid synthetic profile: {0}")]
    Profile(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io { path: path.to_owned(), source }
    }

    fn malformed(line: usize, message: impl Into<String>) -> Self {
        CorpusError::Malformed { line, message: message.into() }
    }
}

/// The four annotation cells: person/spouse crossed with hobby/organization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldCategory {
    PersonHobby,
    PersonOrg,
    SpouseHobby,
    SpouseOrg,
}

impl FieldCategory {
    pub const ALL: [FieldCategory; 4] = [
        FieldCategory::PersonHobby,
        FieldCategory::PersonOrg,
        FieldCategory::SpouseHobby,
        FieldCategory::SpouseOrg,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    /// Key used in annotation and extraction files.
    pub const fn file_key(self) -> &'static str {
        match self {
            FieldCategory::PersonHobby => "person_hobbies",
            FieldCategory::PersonOrg => "person_orgs",
            FieldCategory::SpouseHobby => "spouse_hobbies",
            FieldCategory::SpouseOrg => "spouse_orgs",
        }
    }

    /// Accepts the file key as well as the response keywords.
    pub fn from_key(key: &str) -> Option<FieldCategory> {
        let k = key.to_ascii_lowercase();
        let cat = match k.as_str() {
            "person_hobbies" | "personhobbies" | "person_hobby" | "personhobby" => {
                FieldCategory::PersonHobby
            }
            "person_orgs" | "personorgs" | "personsocialorgs" | "person_social_orgs"
            | "personorg" | "person_org" => FieldCategory::PersonOrg,
            "spouse_hobbies" | "spousehobbies" | "spouse_hobby" | "spousehobby" => {
                FieldCategory::SpouseHobby
            }
            "spouse_orgs" | "spouseorgs" | "spousesocialorgs" | "spouse_social_orgs"
            | "spouseorg" | "spouse_org" => FieldCategory::SpouseOrg,
            _ => return None,
        };
        Some(cat)
    }

    pub const fn is_spouse(self) -> bool {
        matches!(self, FieldCategory::SpouseHobby | FieldCategory::SpouseOrg)
    }

    pub const fn is_org(self) -> bool {
        matches!(self, FieldCategory::PersonOrg | FieldCategory::SpouseOrg)
    }

    /// Same kind (hobby/org), other person.
    pub const fn other_person(self) -> FieldCategory {
        match self {
            FieldCategory::PersonHobby => FieldCategory::SpouseHobby,
            FieldCategory::PersonOrg => FieldCategory::SpouseOrg,
            FieldCategory::SpouseHobby => FieldCategory::PersonHobby,
            FieldCategory::SpouseOrg => FieldCategory::PersonOrg,
        }
    }

    /// Entity class name used in IOB tags.
    pub const fn label(self) -> &'static str {
        match self {
            FieldCategory::PersonHobby => "P-HOB",
            FieldCategory::PersonOrg => "P-ORG",
            FieldCategory::SpouseHobby => "S-HOB",
            FieldCategory::SpouseOrg => "S-ORG",
        }
    }

    pub fn from_label(label: &str) -> Option<FieldCategory> {
        FieldCategory::ALL.into_iter().find(|c| c.label() == label)
    }
}

impl fmt::Display for FieldCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_key())
    }
}

/// Entity lists for all four categories.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Entities([Vec<String>; 4]);

impl Entities {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FieldCategory, &[String])> {
        FieldCategory::ALL.into_iter().map(move |c| (c, self[c].as_slice()))
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

impl Index<FieldCategory> for Entities {
    type Output = Vec<String>;

    fn index(&self, c: FieldCategory) -> &Vec<String> {
        &self.0[c.index()]
    }
}

impl IndexMut<FieldCategory> for Entities {
    fn index_mut(&mut self, c: FieldCategory) -> &mut Vec<String> {
        &mut self.0[c.index()]
    }
}

impl<const N: usize> From<[(FieldCategory, Vec<&str>); N]> for Entities {
    fn from(cells: [(FieldCategory, Vec<&str>); N]) -> Self {
        let mut e = Entities::new();
        for (c, list) in cells {
            e[c] = list.into_iter().map(str::to_owned).collect();
        }
        e
    }
}

/// One family record.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interview {
    pub interview_id: String,
    pub primary_name: String,
    pub primary_id: String,
    pub spouse_name: Option<String>,
    pub spouse_id: Option<String>,
    pub source_text: String,
}

impl Interview {
    pub fn has_spouse(&self) -> bool {
        self.spouse_name.is_some()
    }

    /// Checks the record invariants; returns a message for the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.interview_id.trim().is_empty() {
            return Err("interview_id is empty".into());
        }
        if self.spouse_name.is_some() != self.spouse_id.is_some() {
            return Err("spouse_name and spouse_id must be given together".into());
        }
        if self.source_text.is_empty() {
            return Err("source_text is empty".into());
        }
        Ok(())
    }

    fn normalized(self) -> Interview {
        Interview {
            interview_id: nfc(&self.interview_id),
            primary_name: nfc(&self.primary_name),
            primary_id: nfc(&self.primary_id),
            spouse_name: self.spouse_name.map(|s| nfc(&s)),
            spouse_id: self.spouse_id.map(|s| nfc(&s)),
            source_text: nfc(&self.source_text),
        }
    }
}

/// Gold-standard entity lists for one interview.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Annotation {
    pub interview_id: String,
    pub entities: Entities,
}

impl Annotation {
    pub fn new(interview_id: impl Into<String>, entities: Entities) -> Self {
        Annotation { interview_id: interview_id.into(), entities }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path).map(BufReader::new).map_err(|e| CorpusError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CorpusError> {
    File::create(path).map(BufWriter::new).map_err(|e| CorpusError::io(path, e))
}

/// Iterates `(line_number, line)` over non-blank lines.
fn records<'a, R: BufRead + 'a>(
    reader: R,
    path: &'a Path,
) -> impl Iterator<Item = Result<(usize, String), CorpusError>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(CorpusError::io(path, e))),
        })
}

/// Reads interviews in file order, stopping after `max_records` if given.
pub fn load_corpus(path: &Path, max_records: Option<usize>) -> Result<Vec<Interview>, CorpusError> {
    read_corpus(open(path)?, path, max_records)
}

pub fn read_corpus<R: BufRead>(
    reader: R,
    path: &Path,
    max_records: Option<usize>,
) -> Result<Vec<Interview>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in records(reader, path) {
        if max_records.is_some_and(|m| out.len() >= m) {
            break;
        }
        let (line, text) = rec?;
        let interview: Interview = serde_json::from_str(&text)
            .map_err(|e| CorpusError::malformed(line, e.to_string()))?;
        let interview = interview.normalized();
        interview.validate().map_err(|m| CorpusError::malformed(line, m))?;
        if !seen.insert(interview.interview_id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: interview.interview_id });
        }
        out.push(interview);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, interviews: &[Interview]) -> Result<(), CorpusError> {
    let mut w = create(path)?;
    write_jsonl(&mut w, interviews).map_err(|e| CorpusError::io(path, e))
}

pub(crate) fn write_jsonl<W: Write, T: Serialize>(w: &mut W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Entity lists plus the remaining, non-category keys of one record.
pub(crate) struct EntityRecord {
    pub interview_id: String,
    pub entities: Entities,
    pub extra: Map<String, Value>,
}

/// Parses an annotation-shaped record. `passthrough` lists non-category keys a
/// caller accepts besides `interview_id`.
pub(crate) fn parse_entity_record(
    line: usize,
    text: &str,
    passthrough: &[&str],
) -> Result<EntityRecord, CorpusError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CorpusError::malformed(line, e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(CorpusError::malformed(line, "expected a JSON object"));
    };
    let mut interview_id = None;
    let mut entities = Entities::new();
    let mut extra = Map::new();
    for (key, value) in map {
        if key == "interview_id" {
            match value {
                Value::String(s) if !s.trim().is_empty() => interview_id = Some(nfc(&s)),
                _ => return Err(CorpusError::malformed(line, "interview_id must be a non-empty string")),
            }
            continue;
        }
        if passthrough.contains(&key.as_str()) {
            extra.insert(key, value);
            continue;
        }
        let Some(cat) = FieldCategory::from_key(&key) else {
            return Err(CorpusError::UnknownCategory { line, key });
        };
        let Value::Array(items) = value else {
            return Err(CorpusError::malformed(line, format!("`{key}` must be a list of strings")));
        };
        for item in items {
            let Value::String(s) = item else {
                return Err(CorpusError::malformed(line, format!("`{key}` must be a list of strings")));
            };
            let s = squash_whitespace(&nfc(&s));
            if s.is_empty() {
                return Err(CorpusError::malformed(line, format!("empty entity in `{key}`")));
            }
            entities[cat].push(s);
        }
    }
    let interview_id =
        interview_id.ok_or_else(|| CorpusError::malformed(line, "missing interview_id"))?;
    Ok(EntityRecord { interview_id, entities, extra })
}

pub(crate) fn entity_record_json(
    interview_id: &str,
    entities: &Entities,
    extra: impl IntoIterator<Item = (String, Value)>,
) -> Value {
    let mut map = Map::new();
    map.insert("interview_id".into(), Value::String(interview_id.to_owned()));
    for (cat, list) in entities.iter() {
        map.insert(cat.file_key().into(), Value::from(list.to_vec()));
    }
    map.extend(extra);
    Value::Object(map)
}

pub(crate) fn read_entity_records<R: BufRead>(
    reader: R,
    path: &Path,
    passthrough: &[&str],
) -> Result<Vec<EntityRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in records(reader, path) {
        let (line, text) = rec?;
        let r = parse_entity_record(line, &text, passthrough)?;
        if !seen.insert(r.interview_id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: r.interview_id });
        }
        out.push(r);
    }
    Ok(out)
}

/// Reads gold annotations; categories missing from a record become empty lists.
///
/// A `source` key is tolerated so extraction files can be used as either side.
pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, CorpusError> {
    read_annotations(open(path)?, path)
}

pub fn read_annotations<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Annotation>, CorpusError> {
    Ok(read_entity_records(reader, path, &["source"])?
        .into_iter()
        .map(|r| Annotation { interview_id: r.interview_id, entities: r.entities })
        .collect())
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<(), CorpusError> {
    let values: Vec<Value> = annotations
        .iter()
        .map(|a| entity_record_json(&a.interview_id, &a.entities, []))
        .collect();
    let mut w = create(path)?;
    write_jsonl(&mut w, &values).map_err(|e| CorpusError::io(path, e))
}

/// Inclusive range for the number of gold entities generated per interview.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityCount {
    pub min: usize,
    pub max: usize,
}

/// Parameters of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    pub hobby_vocabulary: Vec<String>,
    pub org_vocabulary: Vec<String>,
    /// Probability that an entity mention carries an appended suffix.
    pub inflection_rate: f64,
    pub entities_per_interview: EntityCount,
    /// Probability that an interview has a spouse.
    pub spouse_rate: f64,
    pub seed: u64,
}

const DEFAULT_HOBBIES: &[&str] = &[
    "kalastus", "metsästys", "hiihto", "käsityöt", "puutarhanhoito", "lukeminen",
    "kuorolaulu", "marjastus", "sienestys", "ompelu", "kutominen", "voimistelu",
    "shakki", "valokuvaus", "soittaminen", "pesäpallo", "suunnistus", "uinti",
    "mehiläisten hoito", "kansantanssi", "puutyöt", "ravihevoset", "postimerkkien keräily",
    "kirjoittaminen", "laulaminen", "pyöräily", "keilailu", "ammunta", "veneily", "matkailu",
];

const DEFAULT_ORGS: &[&str] = &[
    "Lopen Karjalaiset ry", "Sajaniemen Hirvipojat ry", "Lopen Kuparsaaren marttayhdistys",
    "Maamiesseura", "Suojeluskunta", "Lotta Svärd", "Pienviljelijäyhdistys",
    "Metsästysseura", "Vapaapalokunta", "Sotaveteraanit", "Kirkkovaltuusto",
    "Kunnanvaltuusto", "Osuuskauppa", "Osuusmeijeri", "Raittiusseura", "Nuorisoseura",
    "Työväenyhdistys", "Ammattiosasto", "Urheiluseura Kiri", "Maatalousnaiset",
    "Eläkeläisliitto", "Rintamaveteraanit", "Kalastuskunta", "Seurakuntaneuvosto",
    "Kyläyhdistys", "Näytelmäseura", "Sotainvalidien Veljesliitto", "Reserviupseeriliitto",
    "Vanhempainyhdistys", "Martta-yhdistys Kotiliesi",
];

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            hobby_vocabulary: DEFAULT_HOBBIES.iter().map(|s| s.to_string()).collect(),
            org_vocabulary: DEFAULT_ORGS.iter().map(|s| s.to_string()).collect(),
            inflection_rate: 0.3,
            entities_per_interview: EntityCount { min: 0, max: 6 },
            spouse_rate: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, p) in [("inflection_rate", self.inflection_rate), ("spouse_rate", self.spouse_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::Profile(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        let EntityCount { min, max } = self.entities_per_interview;
        if min > max {
            return Err(CorpusError::Profile(format!("entities_per_interview min {min} > max {max}")));
        }
        if max > 0 && (self.hobby_vocabulary.is_empty() || self.org_vocabulary.is_empty()) {
            return Err(CorpusError::Profile(
                "entity vocabulary is empty but entities_per_interview > 0".into(),
            ));
        }
        if self.hobby_vocabulary.iter().chain(&self.org_vocabulary).any(|e| e.trim().is_empty()) {
            return Err(CorpusError::Profile("entity vocabulary contains an empty string".into()));
        }
        Ok(())
    }
}

/// Case-ending-like characters appended by synthetic inflection.
pub const INFLECTION_SUFFIX_CHARS: &[char] = &['n', 'a', 'ä', 's', 't', 'e', 'k', 'l', 'i'];

const FIRST_NAMES_M: &[&str] = &[
    "TOIVO", "EINO", "VÄINÖ", "TAUNO", "ONNI", "ARVO", "VILJO", "PAAVO", "ANTTI", "MATTI",
    "JUHO", "ILMARI", "AUKUSTI", "JOHANNES", "KALLE",
];
const FIRST_NAMES_F: &[&str] = &[
    "Hanna", "Aino", "Inkeri", "Martta", "Helmi", "Lyyli", "Elsa", "Anni", "Hilja", "Saima",
    "Tyyne", "Lempi", "Siiri", "Kerttu", "Impi",
];
const SURNAMES: &[&str] = &[
    "JANATUINEN", "RAVANTTI", "PUKARINEN", "LUUKKA", "HEIKKINEN", "KORHONEN", "PIIPPONEN",
    "KAUPPINEN", "REPO", "SAVOLAINEN", "TIMONEN", "KOKKONEN", "HYVÖNEN", "TURUNEN",
];
const PLACES: &[&str] = &[
    "Kivennapa", "Uusikirkko", "Terijoki", "Valkjärvi", "Muolaa", "Sakkola", "Räisälä",
    "Käkisalmi", "Salmi", "Suistamo", "Sortavala", "Jaakkima",
];
const NEW_PLACES: &[&str] = &["Loppi", "Hyvinkää", "Tammela", "Forssa", "Riihimäki", "Janakkala"];
const OCCUPATIONS: &[&str] = &["maanviljelijä", "metsätyömies", "seppä", "kauppias", "autonkuljettaja", "rakennusmies"];
const FILLER: &[&str] = &[
    "Perhe asuu omakotitalossa.",
    "Tilan pinta-ala on {n} hehtaaria, josta peltoa on {m} hehtaaria.",
    "Karjalassa perheellä oli maatila.",
    "Sodan aikana perhe oli evakossa Pohjanmaalla.",
    "Nykyisin perhe viljelee omaa tilaansa.",
    "Talo rakennettiin vuonna 19{y}.",
    "Isäntä palveli sodassa rintamalla.",
    "Lapset ovat jo muuttaneet kotoa.",
    "Tilalla on lypsylehmiä {n} ja hevonen.",
    "Perhe muutti nykyiselle paikkakunnalle vuonna 19{y}.",
];
const HOBBY_FRAMES: &[&str] = &[
    "{who} harrastaa {list}.",
    "{who} harrastuksiin kuuluvat {list}.",
    "Vapaa-aikanaan {who_lower} harrastaa {list}.",
];
const ORG_FRAMES: &[&str] = &[
    "{who} on jäsenenä {list}.",
    "{who} kuuluu järjestöihin {list}.",
    "{who} toimii {list}.",
];

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} ja {}", init.join(", "), last),
    }
}

fn fill_numbers<R: Rng>(frame: &str, rng: &mut R) -> String {
    frame
        .replace("{n}", &rng.random_range(2..40).to_string())
        .replace("{m}", &rng.random_range(1..20).to_string())
        .replace("{y}", &rng.random_range(45..68).to_string())
}

/// Generates `n` interviews with matching gold annotations.
///
/// Each gold entity is mentioned exactly once in the free-text part, verbatim
/// or with an appended suffix (probability `inflection_rate`). Output is a pure
/// function of `(profile, n)` and interview `i` does not depend on `n`.
pub fn generate_synthetic_corpus(
    profile: &SyntheticProfile,
    n: usize,
) -> Result<Vec<(Interview, Annotation)>, CorpusError> {
    profile.validate()?;
    Ok((0..n).map(|i| synth_one(profile, i)).collect())
}

fn synth_one(profile: &SyntheticProfile, index: usize) -> (Interview, Annotation) {
    let mut rng = rng::derive(profile.seed, &[b"synthetic", &(index as u64).to_le_bytes()]);
    let interview_id = format!("synth_{}_{:06}", profile.seed, index);

    let primary_name = format!(
        "{} {} {}",
        FIRST_NAMES_M.choose(&mut rng).unwrap(),
        FIRST_NAMES_M.choose(&mut rng).unwrap(),
        SURNAMES.choose(&mut rng).unwrap()
    );
    let primary_id = format!("{interview_id}P");
    let has_spouse = rng.random_bool(profile.spouse_rate);
    let spouse = has_spouse.then(|| {
        let surname = SURNAMES.choose(&mut rng).unwrap();
        let mut s = surname.to_lowercase();
        if let Some(first) = s.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        (
            format!("{} {}", FIRST_NAMES_F.choose(&mut rng).unwrap(), s),
            format!("{interview_id}S_1"),
        )
    });

    // Pick distinct entities, none a folded substring of another.
    let EntityCount { min, max } = profile.entities_per_interview;
    let target = if max == 0 { 0 } else { rng.random_range(min..=max) };
    let categories: Vec<FieldCategory> = FieldCategory::ALL
        .into_iter()
        .filter(|c| has_spouse || !c.is_spouse())
        .collect();
    let mut entities = Entities::new();
    let mut chosen_folded: Vec<String> = Vec::new();
    let mut tries = 0;
    while chosen_folded.len() < target && tries < target * 20 {
        tries += 1;
        let cat = *categories.choose(&mut rng).unwrap();
        let vocab = if cat.is_org() { &profile.org_vocabulary } else { &profile.hobby_vocabulary };
        let candidate = squash_whitespace(&nfc(vocab.choose(&mut rng).unwrap()));
        let folded = fold(&candidate);
        if chosen_folded.iter().any(|c| c.contains(&folded) || folded.contains(c.as_str())) {
            continue;
        }
        chosen_folded.push(folded);
        entities[cat].push(candidate);
    }

    let mention = |e: &String, rng: &mut rand_chacha::ChaCha8Rng| -> String {
        if profile.inflection_rate > 0.0 && rng.random_bool(profile.inflection_rate) {
            let k = rng.random_range(1..=3);
            let suffix: String =
                (0..k).map(|_| *INFLECTION_SUFFIX_CHARS.choose(rng).unwrap()).collect();
            format!("{e}{suffix}")
        } else {
            e.clone()
        }
    };

    // Demographic block.
    let mut text = format!(
        "{}, {}, s. {}.{}.{} {}.",
        primary_name,
        OCCUPATIONS.choose(&mut rng).unwrap(),
        rng.random_range(1..29),
        rng.random_range(1..13),
        rng.random_range(1890..1925),
        PLACES.choose(&mut rng).unwrap()
    );
    if let Some((name, _)) = &spouse {
        text.push_str(&format!(
            " Puoliso {} o.s. {}, s. {}.{}.{} {}.",
            name,
            SURNAMES.choose(&mut rng).unwrap(),
            rng.random_range(1..29),
            rng.random_range(1..13),
            rng.random_range(1895..1930),
            PLACES.choose(&mut rng).unwrap()
        ));
    }
    text.push_str(&format!(
        " Asuinpaikat Karjalassa: {} 19{}–39, 41–44. Muut asuinpaikat: {} 19{}–.",
        PLACES.choose(&mut rng).unwrap(),
        rng.random_range(10..30),
        NEW_PLACES.choose(&mut rng).unwrap(),
        rng.random_range(45..50),
    ));

    // Free-text block: filler sentences interleaved with one sentence per non-empty cell.
    let mut sentences: Vec<String> = (0..rng.random_range(1..4))
        .map(|_| fill_numbers(FILLER.choose(&mut rng).unwrap(), &mut rng))
        .collect();
    for cat in FieldCategory::ALL {
        if entities[cat].is_empty() {
            continue;
        }
        let mentions: Vec<String> = entities[cat].iter().map(|e| mention(e, &mut rng)).collect();
        let (who, who_lower) = if cat.is_spouse() { ("Emäntä", "emäntä") } else { ("Isäntä", "isäntä") };
        let frames = if cat.is_org() { ORG_FRAMES } else { HOBBY_FRAMES };
        let sentence = frames
            .choose(&mut rng)
            .unwrap()
            .replace("{who}", who)
            .replace("{who_lower}", who_lower)
            .replace("{list}", &join_list(&mentions));
        let at = rng.random_range(0..=sentences.len());
        sentences.insert(at, sentence);
    }
    for s in sentences {
        text.push(' ');
        text.push_str(&s);
    }

    let (spouse_name, spouse_id) = match spouse {
        Some((n, i)) => (Some(n), Some(i)),
        None => (None, None),
    };
    let interview = Interview {
        interview_id: interview_id.clone(),
        primary_name,
        primary_id,
        spouse_name,
        spouse_id,
        source_text: nfc(&text),
    };
    (interview, Annotation { interview_id, entities })
}

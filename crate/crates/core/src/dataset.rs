//! Image manifests: ingest from `firstname_lastname_age.ext` filenames,
//! one-image-per-subject deduplication, merging, and age/gender statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dex::MAX_AGE;
use crate::preprocess::CropSpec;

pub const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "bmp"];

pub const MANIFEST_HEADER: [&str; 11] = [
    "subject_id",
    "file_path",
    "age",
    "gender",
    "source",
    "crop_x",
    "crop_y",
    "crop_w",
    "crop_h",
    "rotation_deg",
    "notes",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("manifest header must be `{}`, found `{found}`", MANIFEST_HEADER.join(","))]
    Header { found: String },
    #[error("subjects present in both manifests: {}", .0.join(", "))]
    Collision(Vec<String>),
    #[error("diversity score of an empty manifest is undefined")]
    Empty,
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unknown => "unknown",
        })
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            "" | "u" | "unknown" => Ok(Gender::Unknown),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub subject_id: String,
    pub age: u32,
    pub path: PathBuf,
    pub gender: Option<Gender>,
    pub source: String,
    pub crop: Option<CropSpec>,
    pub notes: String,
}

impl ImageRecord {
    pub fn new(subject_id: impl Into<String>, age: u32, path: impl Into<PathBuf>, source: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            age,
            path: path.into(),
            gender: None,
            source: source.into(),
            crop: None,
            notes: String::new(),
        }
    }

    fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<ImageRecord>,
    pub provenance: Vec<String>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, records: Vec<ImageRecord>) -> Self {
        let name = name.into();
        Self {
            provenance: vec![name.clone()],
            name,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.subject_id.as_str()).collect()
    }
}

/// A file that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub file_path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedName {
    pub subject_id: String,
    pub age: u32,
}

/// Parses `firstname_lastname_age.ext`. The age is the last
/// underscore-separated token of the stem and must be 1-3 digits; every
/// earlier token forms the subject id (lower-cased).
pub fn parse_filename(file_name: &str) -> std::result::Result<ParsedName, String> {
    let (stem, ext) = file_name.rsplit_once('.').unwrap_or((file_name, ""));
    if !IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
        return Err(format!("unsupported extension {ext:?}"));
    }
    let Some((subject, age_token)) = stem.rsplit_once('_') else {
        return Err("no age token".into());
    };
    if age_token.is_empty() || age_token.len() > 3 || !age_token.bytes().all(|b| b.is_ascii_digit()) {
        return Err("no age token".into());
    }
    let age: u32 = age_token.parse().expect("digits only");
    if age > MAX_AGE {
        return Err(format!("age {age} outside 0..={MAX_AGE}"));
    }
    let parts: Vec<&str> = subject.split('_').collect();
    if parts.iter().any(|p| p.trim().is_empty()) {
        return Err("empty name token".into());
    }
    Ok(ParsedName {
        subject_id: parts.join("_").to_lowercase(),
        age,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestResult {
    pub manifest: DatasetManifest,
    pub rejects: Vec<Reject>,
}

/// One record per parseable file in `dir` (non-recursive), sorted by path.
pub fn ingest_directory(dir: &Path, source_tag: &str) -> Result<IngestResult> {
    let io = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        if entry.file_type().map_err(io)?.is_file() {
            paths.push(entry.path());
        }
    }
    paths.sort();

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for path in paths {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match parse_filename(&name) {
            Ok(parsed) => records.push(ImageRecord::new(parsed.subject_id, parsed.age, path, source_tag)),
            Err(reason) => rejects.push(Reject {
                file_path: path,
                reason,
            }),
        }
    }
    Ok(IngestResult {
        manifest: DatasetManifest::new(source_tag, records),
        rejects,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupPolicy {
    /// Lexicographically first file name per subject.
    KeepFirstSorted,
    /// Uniform pick per subject from a ChaCha8 stream seeded with the value;
    /// subjects are visited in sorted order.
    RandomSeeded(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupResult {
    pub manifest: DatasetManifest,
    /// Subjects with no record at or below `max_age`.
    pub dropped_subjects: Vec<String>,
}

/// Keeps exactly one record per subject. When `max_age` is set, candidates
/// older than it are discarded first. Surviving records keep their original
/// relative order.
pub fn dedup(manifest: &DatasetManifest, policy: DedupPolicy, max_age: Option<u32>) -> DedupResult {
    let mut candidates: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut all_subjects = BTreeSet::new();
    for (i, r) in manifest.records.iter().enumerate() {
        all_subjects.insert(r.subject_id.as_str());
        if max_age.is_none_or(|m| r.age <= m) {
            candidates.entry(r.subject_id.as_str()).or_default().push(i);
        }
    }

    let mut rng = match policy {
        DedupPolicy::RandomSeeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        DedupPolicy::KeepFirstSorted => None,
    };
    let mut keep = BTreeSet::new();
    for idx in candidates.values_mut() {
        idx.sort_by(|&a, &b| {
            let (ra, rb) = (&manifest.records[a], &manifest.records[b]);
            ra.file_name()
                .cmp(&rb.file_name())
                .then_with(|| ra.path.cmp(&rb.path))
                .then(a.cmp(&b))
        });
        let pick = match rng.as_mut() {
            Some(rng) => idx[rng.random_range(0..idx.len())],
            None => idx[0],
        };
        keep.insert(pick);
    }

    let dropped_subjects: Vec<String> = all_subjects
        .into_iter()
        .filter(|s| !candidates.contains_key(s))
        .map(str::to_string)
        .collect();
    for s in &dropped_subjects {
        log::info!("dedup: subject {s} has no record within the age limit, dropped");
    }

    let records = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, r)| r.clone())
        .collect();
    DedupResult {
        manifest: DatasetManifest {
            records,
            ..manifest.clone()
        },
        dropped_subjects,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionPolicy {
    Error,
    PreferA,
    PreferB,
}

/// Union of two deduplicated manifests. Records of `a` come first, then the
/// records of `b` that do not collide; with `PreferB` a colliding record of
/// `b` replaces `a`'s in place.
pub fn merge(a: &DatasetManifest, b: &DatasetManifest, collision: CollisionPolicy) -> Result<DatasetManifest> {
    let a_subjects = a.subjects();
    let collisions: Vec<String> = b.subjects().intersection(&a_subjects).map(|s| s.to_string()).collect();
    if collision == CollisionPolicy::Error && !collisions.is_empty() {
        return Err(DatasetError::Collision(collisions));
    }
    let colliding: BTreeSet<&str> = collisions.iter().map(String::as_str).collect();
    let b_by_subject: BTreeMap<&str, &ImageRecord> = b.records.iter().map(|r| (r.subject_id.as_str(), r)).collect();

    let mut records: Vec<ImageRecord> = a
        .records
        .iter()
        .map(|r| match collision {
            CollisionPolicy::PreferB if colliding.contains(r.subject_id.as_str()) => {
                (*b_by_subject[r.subject_id.as_str()]).clone()
            }
            _ => r.clone(),
        })
        .collect();
    records.extend(
        b.records
            .iter()
            .filter(|r| !colliding.contains(r.subject_id.as_str()))
            .cloned(),
    );

    let name = match (a.name.is_empty(), b.name.is_empty()) {
        (_, true) => a.name.clone(),
        (true, false) => b.name.clone(),
        (false, false) => format!("{}+{}", a.name, b.name),
    };
    let mut provenance = a.provenance.clone();
    provenance.extend(b.provenance.iter().cloned());
    Ok(DatasetManifest {
        name,
        records,
        provenance,
    })
}

/// Occupied bins only, keyed by the lower edge of each bin.
pub fn age_histogram(manifest: &DatasetManifest, bin_width: u32) -> Vec<(u32, usize)> {
    let width = bin_width.max(1);
    let mut bins = BTreeMap::new();
    for r in &manifest.records {
        *bins.entry(r.age / width * width).or_insert(0) += 1;
    }
    bins.into_iter().collect()
}

fn normalised_entropy(counts: &[usize], classes: usize) -> f64 {
    let total: usize = counts.iter().sum();
    if classes < 2 || total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    (h / (classes as f64).ln()).clamp(0.0, 1.0)
}

/// Mean of the normalised age entropy (one class per year over
/// `0..=max_age` of the manifest) and the normalised gender entropy over
/// {female, male}. Unknown genders are ignored; if every gender is unknown
/// the score is the age term alone.
pub fn diversity_score(manifest: &DatasetManifest) -> Result<f64> {
    if manifest.is_empty() {
        return Err(DatasetError::Empty);
    }
    let max_age = manifest.records.iter().map(|r| r.age).max().unwrap_or(0) as usize;
    let mut ages = vec![0usize; max_age + 1];
    let mut genders = [0usize; 2];
    for r in &manifest.records {
        ages[r.age as usize] += 1;
        match r.gender {
            Some(Gender::Female) => genders[0] += 1,
            Some(Gender::Male) => genders[1] += 1,
            _ => {}
        }
    }
    let age_term = normalised_entropy(&ages, max_age + 1);
    if genders.iter().sum::<usize>() == 0 {
        return Ok(age_term);
    }
    let gender_term = normalised_entropy(&genders, 2);
    Ok((age_term + gender_term) / 2.0)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the manifest CSV (see [`MANIFEST_HEADER`]).
pub fn write_manifest(manifest: &DatasetManifest, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for r in &manifest.records {
        let crop = r.crop.as_ref();
        w.write_record([
            r.subject_id.clone(),
            r.path.to_string_lossy().into_owned(),
            r.age.to_string(),
            opt(r.gender),
            r.source.clone(),
            opt(crop.map(|c| c.x)),
            opt(crop.map(|c| c.y)),
            opt(crop.map(|c| c.w)),
            opt(crop.map(|c| c.h)),
            opt(crop.map(|c| c.rotation_deg)),
            r.notes.clone(),
        ])?;
    }
    w.flush().map_err(|e| DatasetError::Io {
        path: PathBuf::from("<manifest>"),
        source: e,
    })?;
    Ok(())
}

pub fn write_manifest_file(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_manifest(manifest, std::io::BufWriter::new(file))
}

fn parse_field<T: FromStr>(line: u64, name: &str, raw: &str) -> Result<Option<T>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| DatasetError::Row {
        line,
        reason: format!("{name} {raw:?} is not valid"),
    })
}

/// Reads a manifest CSV. `name` becomes the manifest name and provenance.
pub fn read_manifest(input: impl Read, name: &str) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(DatasetError::Header {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let subject_id = field(0).trim().to_string();
        if subject_id.is_empty() {
            return Err(DatasetError::Row {
                line,
                reason: "empty subject_id".into(),
            });
        }
        let age: u32 = parse_field(line, "age", field(2))?.ok_or_else(|| DatasetError::Row {
            line,
            reason: "missing age".into(),
        })?;
        if age > MAX_AGE {
            return Err(DatasetError::Row {
                line,
                reason: format!("age {age} outside 0..={MAX_AGE}"),
            });
        }
        let gender = parse_field::<Gender>(line, "gender", field(3))?;
        let crop_fields = (
            parse_field::<u32>(line, "crop_x", field(5))?,
            parse_field::<u32>(line, "crop_y", field(6))?,
            parse_field::<u32>(line, "crop_w", field(7))?,
            parse_field::<u32>(line, "crop_h", field(8))?,
        );
        let rotation = parse_field::<f64>(line, "rotation_deg", field(9))?;
        let crop = match crop_fields {
            (Some(x), Some(y), Some(w), Some(h)) => Some(CropSpec {
                x,
                y,
                w,
                h,
                rotation_deg: rotation.unwrap_or(0.0),
            }),
            (None, None, None, None) => None,
            _ => {
                return Err(DatasetError::Row {
                    line,
                    reason: "crop_x, crop_y, crop_w and crop_h must be given together".into(),
                })
            }
        };
        records.push(ImageRecord {
            subject_id,
            age,
            path: PathBuf::from(field(1)),
            gender,
            source: field(4).to_string(),
            crop,
            notes: field(10).to_string(),
        });
    }
    Ok(DatasetManifest::new(name, records))
}

pub fn read_manifest_file(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_manifest(std::io::BufReader::new(file), &name)
}

pub fn write_rejects(rejects: &[Reject], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["file_path", "reason"])?;
    for r in rejects {
        w.write_record([r.file_path.to_string_lossy().as_ref(), r.reason.as_str()])?;
    }
    w.flush().map_err(|e| DatasetError::Io {
        path: PathBuf::from("<rejects>"),
        source: e,
    })?;
    Ok(())
}

//! Audit manifests and intersectional accuracy tables.
//!
//! A manifest is a CSV file with the header
//! `path,gender,skin_type,hair_length,crop_x,crop_y,crop_w,crop_h`.
//! Paths are relative to the manifest's directory; the crop columns are
//! either all empty or all set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::CropBox;
use crate::model::{Gender, GenderScore};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("manifest line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("no score for {0}")]
    MissingScore(String),
    #[error("unknown attribute {0:?} (expected gender, skin_type or hair_length)")]
    UnknownAttribute(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkinType {
    Dark,
    Light,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HairLength {
    Short,
    Long,
    Unknown,
}

impl SkinType {
    pub fn as_str(self) -> &'static str {
        match self {
            SkinType::Dark => "dark",
            SkinType::Light => "light",
        }
    }
}

impl HairLength {
    pub fn as_str(self) -> &'static str {
        match self {
            HairLength::Short => "short",
            HairLength::Long => "long",
            HairLength::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub gender: Gender,
    pub skin_type: SkinType,
    pub hair_length: HairLength,
    pub crop: Option<CropBox>,
}

impl ManifestRow {
    /// Short group code such as `DF` (dark female) or `LM`.
    pub fn group_code(&self) -> String {
        group_code(self.skin_type, self.gender)
    }

    pub fn id(&self) -> String {
        self.path.to_string_lossy().into_owned()
    }
}

pub fn group_code(skin: SkinType, gender: Gender) -> String {
    let s = match skin {
        SkinType::Dark => 'D',
        SkinType::Light => 'L',
    };
    let g = match gender {
        Gender::Female => 'F',
        Gender::Male => 'M',
    };
    format!("{s}{g}")
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRow {
    path: String,
    gender: String,
    skin_type: String,
    hair_length: String,
    crop_x: Option<usize>,
    crop_y: Option<usize>,
    crop_w: Option<usize>,
    crop_h: Option<usize>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(field: &str, value: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(value.trim().to_ascii_lowercase()))
        .map_err(|_| format!("invalid {field} {value:?}"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory that relative row paths resolve against.
    pub base: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(base: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Self {
        Self {
            base: base.into(),
            rows,
        }
    }

    pub fn image_path(&self, row: &ManifestRow) -> PathBuf {
        self.base.join(&row.path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(RawRow {
                path: r.path.to_string_lossy().into_owned(),
                gender: r.gender.as_str().into(),
                skin_type: r.skin_type.as_str().into(),
                hair_length: r.hair_length.as_str().into(),
                crop_x: r.crop.map(|c| c.x),
                crop_y: r.crop.map(|c| c.y),
                crop_w: r.crop.map(|c| c.width),
                crop_h: r.crop.map(|c| c.height),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

/// Parses manifest text. Paths are checked against `base` only when
/// `check_files` is set.
pub fn parse_manifest(text: &str, base: &Path, check_files: bool) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for result in reader.deserialize::<RawRow>() {
        let raw = result.map_err(|e| AuditError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rows.len() as u64 + 2;
        let fail = |reason: String| AuditError::Parse { line, reason };
        if raw.path.is_empty() {
            return Err(fail("empty path".into()));
        }
        let gender: Gender = parse_enum("gender", &raw.gender).map_err(fail)?;
        let skin_type: SkinType = parse_enum("skin_type", &raw.skin_type).map_err(fail)?;
        let hair_length: HairLength = parse_enum("hair_length", &raw.hair_length).map_err(fail)?;
        let crop = match (raw.crop_x, raw.crop_y, raw.crop_w, raw.crop_h) {
            (Some(x), Some(y), Some(width), Some(height)) => {
                if width == 0 || height == 0 {
                    return Err(fail("crop box has zero area".into()));
                }
                Some(CropBox {
                    x,
                    y,
                    width,
                    height,
                })
            }
            (None, None, None, None) => None,
            _ => return Err(fail("crop columns must be all set or all empty".into())),
        };
        if !seen.insert(raw.path.clone()) {
            return Err(fail(format!("duplicate path {}", raw.path)));
        }
        let path = PathBuf::from(&raw.path);
        if check_files && !base.join(&path).is_file() {
            return Err(AuditError::MissingFile(base.join(&path)));
        }
        rows.push(ManifestRow {
            path,
            gender,
            skin_type,
            hair_length,
            crop,
        });
    }
    Ok(Manifest::new(base, rows))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AuditError::MissingFile(path.to_path_buf()),
        _ => AuditError::Io(e),
    })?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    parse_manifest(&text, &base, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Gender,
    SkinType,
    HairLength,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::SkinType => "skin_type",
            Attribute::HairLength => "hair_length",
        }
    }

    pub fn value(self, row: &ManifestRow) -> &'static str {
        match self {
            Attribute::Gender => row.gender.as_str(),
            Attribute::SkinType => row.skin_type.as_str(),
            Attribute::HairLength => row.hair_length.as_str(),
        }
    }

    /// Comma-separated attribute names.
    pub fn parse_list(s: &str) -> Result<Vec<Attribute>> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for Attribute {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gender" => Ok(Attribute::Gender),
            "skin_type" | "skin" => Ok(Attribute::SkinType),
            "hair_length" | "hair" => Ok(Attribute::HairLength),
            other => Err(AuditError::UnknownAttribute(other.into())),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cell {
    pub n: usize,
    pub correct: usize,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAccuracyTable {
    pub group_by: Vec<Attribute>,
    /// Keyed by the attribute values in `group_by` order.
    pub cells: BTreeMap<Vec<&'static str>, Cell>,
}

impl GroupAccuracyTable {
    pub fn total(&self) -> usize {
        self.cells.values().map(|c| c.n).sum()
    }

    pub fn get(&self, key: &[&str]) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|(k, _)| k.as_slice() == key)
            .map(|(_, c)| c)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in &self.group_by {
            s.push_str(a.name());
            s.push(',');
        }
        s.push_str("n,correct,accuracy\n");
        for (key, cell) in &self.cells {
            for v in key {
                s.push_str(v);
                s.push(',');
            }
            let _ = writeln!(
                s,
                "{},{},{}",
                cell.n,
                cell.correct,
                crate::stability::sig6(cell.accuracy())
            );
        }
        s
    }
}

/// Accuracy per intersection cell; a row is correct when the score's
/// decision matches its gender label. `scores` is aligned with `rows`.
pub fn group_accuracy(
    rows: &[ManifestRow],
    scores: &[Option<GenderScore>],
    group_by: &[Attribute],
) -> Result<GroupAccuracyTable> {
    let mut cells: BTreeMap<Vec<&'static str>, Cell> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let score = scores
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| AuditError::MissingScore(row.id()))?;
        let key = group_by.iter().map(|a| a.value(row)).collect();
        let cell = cells.entry(key).or_default();
        cell.n += 1;
        if score.decision() == row.gender {
            cell.correct += 1;
        }
    }
    Ok(GroupAccuracyTable {
        group_by: group_by.to_vec(),
        cells,
    })
}

//! Dataset manifests: one JSON record per line, images referenced by
//! relative path, masks inline-RLE or an external bitmap file.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mask::Bitmap;
use super::rle::{decode_mask, RleMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Semantic,
    Referring,
    Reasoning,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Category::Semantic => write!(f, "semantic"),
            Category::Referring => write!(f, "referring"),
            Category::Reasoning => write!(f, "reasoning"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum MaskRef {
    /// Inline run-length encoding.
    #[serde(rename = "rle")]
    Rle(RleMask),
    /// Relative path to a PGM bitmap.
    #[serde(rename = "bitmap")]
    Bitmap(PathBuf),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    /// Image path relative to the manifest file.
    pub image: PathBuf,
    pub mask: MaskRef,
    pub category: Category,
    /// Brief target phrase; required for semantic/referring samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    /// Full user query; required for reasoning samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    /// Optional long target description (reasoning samples), used as the
    /// text-metric reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed record at {path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("sample {sample_id}: category {category} requires a {field} field")]
    PayloadShape { sample_id: String, category: Category, field: &'static str },
    #[error("sample {sample_id}: duplicate sample id")]
    DuplicateId { sample_id: String },
    #[error("sample {sample_id}: {source}")]
    Codec { sample_id: String, source: super::rle::CodecError },
    #[error("sample {sample_id}: mask is {mask_h}x{mask_w} but image is {img_h}x{img_w}")]
    MaskShape { sample_id: String, mask_h: usize, mask_w: usize, img_h: usize, img_w: usize },
}

impl SampleRecord {
    /// Checks that the text payload matches the category shape.
    pub fn validate_payload(&self) -> Result<(), ManifestError> {
        let missing = |field| ManifestError::PayloadShape {
            sample_id: self.sample_id.clone(),
            category: self.category,
            field,
        };
        match self.category {
            Category::Semantic | Category::Referring => {
                if self.phrase.as_deref().is_none_or(|p| p.trim().is_empty()) {
                    return Err(missing("phrase"));
                }
            }
            Category::Reasoning => {
                if self.query.as_deref().is_none_or(|q| q.trim().is_empty()) {
                    return Err(missing("query"));
                }
            }
        }
        Ok(())
    }

    /// Decodes the mask, resolving bitmap references against `base_dir`.
    pub fn load_mask(&self, base_dir: &Path) -> Result<Bitmap, ManifestError> {
        match &self.mask {
            MaskRef::Rle(rle) => decode_mask(rle)
                .map_err(|source| ManifestError::Codec { sample_id: self.sample_id.clone(), source }),
            MaskRef::Bitmap(rel) => {
                let path = base_dir.join(rel);
                crate::raster::read_pgm_mask(&path)
                    .map_err(|source| ManifestError::Io { path, source })
            }
        }
    }

    pub fn image_path(&self, base_dir: &Path) -> PathBuf {
        base_dir.join(&self.image)
    }
}

/// A loaded manifest plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let file = std::fs::File::open(path)
            .map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut records = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line).map_err(|source| {
                ManifestError::Parse { path: path.to_path_buf(), line: i + 1, source }
            })?;
            record.validate_payload()?;
            if !ids.insert(record.sample_id.clone()) {
                return Err(ManifestError::DuplicateId { sample_id: record.sample_id });
            }
            records.push(record);
        }
        Ok(Self { records, base_dir })
    }

    pub fn save(path: &Path, records: &[SampleRecord]) -> Result<(), ManifestError> {
        let mut file = std::fs::File::create(path)
            .map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        for record in records {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(file, "{line}")
                .map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

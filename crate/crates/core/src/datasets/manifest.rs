//! Line-delimited JSON manifests.
//!
//! ```text
//! {"schema_version": 1}
//! {"path": "img/0000.bsim", "target": 12.0, "split": "train"}
//! {"path": ["r.png", "g.png", "b.png", "d.png", "e.png"], "target": 3.5, "split": "test"}
//! ```
//!
//! The header line is optional on read and always written. Relative paths
//! resolve against the manifest's directory; a list of paths stacks the
//! channels of each file in order (for images with more than four channels).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::imageio::{read_image, stack_channels};
use super::synth::Split;
use crate::error::{Error, Result};
use crate::image::Image;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImagePath {
    Single(PathBuf),
    Channels(Vec<PathBuf>),
}

impl ImagePath {
    pub fn parts(&self) -> Vec<&Path> {
        match self {
            ImagePath::Single(p) => vec![p.as_path()],
            ImagePath::Channels(ps) => ps.iter().map(PathBuf::as_path).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub path: ImagePath,
    pub target: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub schema_version: u32,
    pub records: Vec<Record>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    path: ImagePath,
    target: f64,
    split: String,
}

impl Manifest {
    pub fn new(records: Vec<Record>, base_dir: impl Into<PathBuf>) -> Self {
        Manifest { schema_version: SCHEMA_VERSION, records, base_dir: base_dir.into() }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest { path: path.to_path_buf(), line, message };
        let mut schema_version = SCHEMA_VERSION;
        let mut records = Vec::new();
        let mut seen_content = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if !seen_content {
                seen_content = true;
                if let Ok(h) = serde_json::from_str::<Header>(trimmed) {
                    if h.schema_version != SCHEMA_VERSION {
                        return Err(err(lineno, format!("unsupported schema version {}", h.schema_version)));
                    }
                    schema_version = h.schema_version;
                    continue;
                }
            }
            let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| err(lineno, e.to_string()))?;
            if !raw.target.is_finite() {
                return Err(err(lineno, format!("non-finite target {}", raw.target)));
            }
            let split = raw
                .split
                .parse::<Split>()
                .map_err(|_| err(lineno, format!("unknown split '{}' (expected train or test)", raw.split)))?;
            if raw.path.parts().is_empty() {
                return Err(err(lineno, "empty path list".into()));
            }
            records.push(Record { path: raw.path, target: raw.target, split });
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { schema_version, records, base_dir })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({ "schema_version": self.schema_version }).to_string();
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn targets(&self, split: Option<Split>) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .map(|r| r.target)
            .collect()
    }

    /// Positions of the records in `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_image(&self, index: usize) -> Result<Image> {
        let rec = &self.records[index];
        let parts = rec
            .path
            .parts()
            .into_iter()
            .map(|p| read_image(&self.resolve(p)))
            .collect::<Result<Vec<_>>>()?;
        stack_channels(parts)
    }

    pub fn load_images(&self) -> Result<Vec<Image>> {
        (0..self.records.len())
            .map(|i| self.load_image(i).map_err(|e| Error::at_index(i, e)))
            .collect()
    }
}

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::batch::SampleSource;
use super::sample::{Method, Sample, Split};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskOrigin};

/// Face bounding box in pixels, serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One JSON-lines manifest entry. Paths are relative to the manifest's
/// directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_bbox: Option<BBox>,
    pub label: u8,
    pub method: Method,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<Record>) -> Self {
        Manifest { root: root.into(), records }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Load(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if rec.label > 1 {
                return Err(Error::Load(format!("{}:{}: label {} is not 0 or 1", path.display(), lineno + 1, rec.label)));
            }
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { root, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| Error::Load(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> ManifestSplit<'_> {
        ManifestSplit {
            manifest: self,
            indices: self.records.iter().enumerate().filter(|(_, r)| r.split == split).map(|(i, _)| i).collect(),
        }
    }

    /// Decode one record. Real images without a mask file get an all-zero
    /// mask; fake images without one get `None`.
    pub fn load_record(&self, rec: &Record) -> Result<Sample> {
        let img_path = self.resolve(&rec.image_path);
        let image = image::open(&img_path).map_err(|e| Error::record(&img_path, e.to_string()))?.to_rgb8();
        let (w, h) = image.dimensions();
        let mask = match &rec.mask_path {
            Some(mp) => {
                let mp = self.resolve(mp);
                let m = BinaryMask::load_png(&mp, MaskOrigin::GroundTruth)?;
                if (m.width(), m.height()) != (w as usize, h as usize) {
                    return Err(Error::record(&mp, format!("mask {}x{} does not match image {w}x{h}", m.width(), m.height())));
                }
                Some(m)
            }
            None if rec.label == 0 => Some(BinaryMask::zeros(w as usize, h as usize, MaskOrigin::GroundTruth)),
            None => None,
        };
        let sample = Sample { id: rec.id.clone(), image, label: rec.label, mask, method: rec.method };
        sample.validate().map_err(|e| Error::record(&img_path, e.to_string()))?;
        Ok(sample)
    }
}

/// Records of one split, decoded lazily.
pub struct ManifestSplit<'a> {
    manifest: &'a Manifest,
    indices: Vec<usize>,
}

impl ManifestSplit<'_> {
    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.indices.iter().map(|&i| &self.manifest.records[i])
    }

    /// Decode every record into memory.
    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.indices.len()).map(|i| self.load(i)).collect()
    }
}

impl SampleSource for ManifestSplit<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn load(&self, i: usize) -> Result<Sample> {
        let rec = &self.manifest.records[self.indices[i]];
        let mut s = self.manifest.load_record(rec)?;
        s.id = rec.id.clone();
        Ok(s)
    }

    fn bbox(&self, i: usize) -> Option<BBox> {
        self.manifest.records[self.indices[i]].face_bbox
    }
}

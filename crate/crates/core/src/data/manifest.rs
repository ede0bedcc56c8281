//! Directory-backed corpus: `<root>/<class>/<id>.ppm` plus `manifest.tsv`
//! (`id`, `class`, `split`) and, for synthetic corpora, `boxes.tsv`
//! (`id`, `x`, `y`, `w`, `h`) with the planted damage rectangles.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{class_index, pnm, LabeledImage, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::geom::Rect;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const BOXES_FILE: &str = "boxes.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "none",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::Unassigned),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            entries: Vec::new(),
        }
    }
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            ..Default::default()
        }
    }

    pub fn per_class(&self) -> Vec<Vec<&ManifestEntry>> {
        let mut out = vec![Vec::new(); self.class_names.len()];
        for e in &self.entries {
            out[e.class].push(e);
        }
        out
    }

    pub fn counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for e in self.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
            counts[e.class] += 1;
        }
        counts
    }

    pub fn image_path(&self, root: &Path, entry: &ManifestEntry) -> PathBuf {
        root.join(&self.class_names[entry.class])
            .join(format!("{}.ppm", entry.id))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tclass\tsplit\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.id, self.class_names[e.class], e.split));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("id\tclass\tsplit") {
            return Err(Error::Format("manifest header must be id, class, split".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, class, split] = cols[..] else {
                return Err(Error::Format(format!("manifest line {}: expected 3 columns", n + 2)));
            };
            let class = class_index(class)
                .ok_or_else(|| Error::Format(format!("unknown class {class:?}")))?;
            entries.push(ManifestEntry {
                id: id.to_string(),
                class,
                split: split.parse()?,
            });
        }
        Ok(Self::new(entries))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_tsv(&text)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, self.to_tsv()).map_err(|e| Error::io(&path, e))
    }

    /// Decode the images of one split (or all of them) in manifest order.
    pub fn load_images(
        &self,
        root: &Path,
        split: Option<Split>,
        channels: Option<usize>,
    ) -> Result<Vec<LabeledImage>> {
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| {
                let pixels = pnm::read(&self.image_path(root, e), channels)?;
                LabeledImage::new(pixels, e.class, e.id.clone())
            })
            .collect()
    }
}

/// Write images into `<root>/<class>/<id>.ppm`, creating class folders.
pub fn write_images(root: &Path, manifest: &DatasetManifest, images: &[LabeledImage]) -> Result<()> {
    for name in &manifest.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for img in images {
        let entry = ManifestEntry {
            id: img.source_id.clone(),
            class: img.label,
            split: Split::Unassigned,
        };
        pnm::write(&manifest.image_path(root, &entry), &img.pixels)?;
    }
    Ok(())
}

pub fn boxes_to_tsv(boxes: &BTreeMap<String, Rect>) -> String {
    let mut out = String::from("id\tx\ty\tw\th\n");
    for (id, r) in boxes {
        out.push_str(&format!("{id}\t{}\t{}\t{}\t{}\n", r.x, r.y, r.w, r.h));
    }
    out
}

pub fn boxes_from_tsv(text: &str) -> Result<BTreeMap<String, Rect>> {
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, x, y, w, h] = cols[..] else {
            return Err(Error::Format(format!("bad boxes line {line:?}")));
        };
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad box value {s:?}")))
        };
        out.insert(id.to_string(), Rect::new(num(x)?, num(y)?, num(w)?, num(h)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let m = DatasetManifest::new(vec![
            ManifestEntry { id: "a".into(), class: 0, split: Split::Train },
            ManifestEntry { id: "b".into(), class: 7, split: Split::Test },
            ManifestEntry { id: "c".into(), class: 2, split: Split::Unassigned },
        ]);
        let text = m.to_tsv();
        assert!(text.starts_with("id\tclass\tsplit\n"));
        assert_eq!(DatasetManifest::from_tsv(&text).unwrap(), m);
        assert_eq!(m.counts(Some(Split::Train))[0], 1);
    }

    #[test]
    fn rejects_unknown_class() {
        assert!(DatasetManifest::from_tsv("id\tclass\tsplit\nx\tdent\ttrain\n").is_err());
    }

    #[test]
    fn boxes_round_trip() {
        let mut b = BTreeMap::new();
        b.insert("img".to_string(), Rect::new(1, 2, 3, 4));
        assert_eq!(boxes_from_tsv(&boxes_to_tsv(&b)).unwrap(), b);
    }
}

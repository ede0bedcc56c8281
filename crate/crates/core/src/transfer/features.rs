//! Precomputed feature vectors.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "FEAT"  u32 version=1  u32 N  u32 D  u32 K
//! N×D f64 (row-major)
//! N u16 labels
//! ```
//!
//! CSV alternative: header `label,f0,…,f{D-1}`, one example per line. The
//! extractor name lives in a sidecar `<file>.json` (`{"extractor": …}`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;

const MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// `N×D`, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
    pub extractor: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    extractor: String,
}

impl FeatureSet {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize, extractor: impl Into<String>) -> Result<Self> {
        let fs = Self {
            features,
            labels,
            dim,
            classes,
            extractor: extractor.into(),
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Data("empty feature set".into()));
        }
        if self.dim == 0 || self.features.len() != self.labels.len() * self.dim {
            return Err(Error::Shape(format!(
                "{} values for {} rows of dimension {}",
                self.features.len(),
                self.labels.len(),
                self.dim
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Label {
                label,
                classes: self.classes,
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature set contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.features.len() * 8 + self.labels.len() * 2);
        out.extend_from_slice(MAGIC);
        for v in [VERSION as usize, self.len(), self.dim, self.classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], extractor: impl Into<String>) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a FEAT file (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (version, n, dim, classes) = (u32_at(4), u32_at(8), u32_at(12), u32_at(16));
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported FEAT version {version}")));
        }
        if n == 0 {
            return Err(Error::Data("empty feature set".into()));
        }
        let want = HEADER_LEN + n * dim * 8 + n * 2;
        if bytes.len() != want {
            return Err(Error::Format(format!(
                "FEAT header promises {n}×{dim} values and {n} labels ({want} bytes), file has {}",
                bytes.len()
            )));
        }
        let body = &bytes[HEADER_LEN..];
        let features = body[..n * dim * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = body[n * dim * 8..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        Self::new(features, labels, dim, classes, extractor)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (row, &label) in self.rows().zip(&self.labels) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// `classes` defaults to one more than the largest label.
    pub fn from_csv(text: &str, classes: Option<usize>, extractor: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        let dim = header.len().saturating_sub(1);
        let expected = (0..dim).map(|j| format!("f{j}"));
        if header.get(0) != Some("label") || !header.iter().skip(1).eq(expected) {
            return Err(Error::Format("CSV header must be label,f0,…,f{D-1}".into()));
        }
        let (mut features, mut labels) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
            };
            let label = rec[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad label {:?}", &rec[0])))?;
            labels.push(label);
            for v in rec.iter().skip(1) {
                features.push(num(v)?);
            }
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Self::new(features, labels, dim, classes, extractor)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Read a FEAT (or `.csv`) file. The extractor name comes from the sidecar
/// when present, otherwise from the file stem.
pub fn read_feature_file(path: &Path) -> Result<FeatureSet> {
    let side = sidecar_path(path);
    let extractor = match fs::read_to_string(&side) {
        Ok(text) => {
            serde_json::from_str::<Sidecar>(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?
                .extractor
        }
        Err(_) => path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
    };
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FeatureSet::from_csv(&text, None, extractor)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureSet::from_bytes(&bytes, extractor)
    }
}

/// Write binary FEAT (or CSV for a `.csv` path) plus the sidecar.
pub fn write_feature_file(path: &Path, fs_: &FeatureSet) -> Result<()> {
    let bytes = if is_csv(path) { fs_.to_csv()?.into_bytes() } else { fs_.to_bytes() };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&Sidecar {
        extractor: fs_.extractor.clone(),
    })
    .expect("sidecar serializes");
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Linearly separable features: row `i` of class `c` is `margin·e_c` plus
/// uniform noise in `[-noise, noise]` on every coordinate. Separable by
/// `w_c = e_c` whenever `noise < margin / 2`.
pub fn separable_features(per_class: usize, dim: usize, classes: usize, margin: f64, noise: f64, seed: u64) -> Result<FeatureSet> {
    if classes > dim {
        return Err(Error::Config(format!("{classes} classes need dimension ≥ {classes}, got {dim}")));
    }
    let mut rng = Prng::new(seed);
    let mut features = Vec::with_capacity(per_class * classes * dim);
    let mut labels = Vec::with_capacity(per_class * classes);
    for i in 0..per_class * classes {
        let c = i % classes;
        for j in 0..dim {
            let base = if j == c { margin } else { 0.0 };
            features.push(base + rng.uniform(-noise, noise));
        }
        labels.push(c);
    }
    FeatureSet::new(features, labels, dim, classes, "separable")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureSet {
        FeatureSet::new(
            (0..12).map(|v| v as f64 * 0.5 - 1.0).collect(),
            vec![0, 2, 1],
            4,
            3,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn hand_built_bytes() {
        let mut bytes = b"FEAT".to_vec();
        for v in [1u32, 3, 4, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in 0..12 {
            bytes.extend_from_slice(&(v as f64 * 0.5 - 1.0).to_le_bytes());
        }
        for l in [0u16, 2, 1] {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        let fs = FeatureSet::from_bytes(&bytes, "toy").unwrap();
        assert_eq!(fs, small());
        assert_eq!(fs.row(1), &[1.0, 1.5, 2.0, 2.5]);
        assert_eq!(fs.to_bytes(), bytes);
    }

    #[test]
    fn empty_is_error() {
        let mut bytes = b"FEAT".to_vec();
        for v in [1u32, 0, 4, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let err = FeatureSet::from_bytes(&bytes, "x").unwrap_err();
        assert!(err.to_string().contains("empty feature set"));
    }

    #[test]
    fn bad_files() {
        assert!(FeatureSet::from_bytes(b"FEAX\0\0\0\0", "x").is_err());
        let mut b = small().to_bytes();
        b.pop();
        assert!(FeatureSet::from_bytes(&b, "x").is_err());
        let mut b = small().to_bytes();
        let last = b.len() - 2;
        b[last] = 9; // label 9 with K = 3
        assert!(matches!(FeatureSet::from_bytes(&b, "x"), Err(Error::Label { .. })));
        let mut b = small().to_bytes();
        b[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(FeatureSet::from_bytes(&b, "x").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let fs = small();
        let text = fs.to_csv().unwrap();
        assert!(text.starts_with("label,f0,f1,f2,f3\n"));
        assert_eq!(FeatureSet::from_csv(&text, Some(3), "toy").unwrap(), fs);
        assert!(FeatureSet::from_csv("lbl,f0\n0,1\n", None, "x").is_err());
    }

    #[test]
    fn files_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut fs = separable_features(3, 8, 4, 2.0, 0.1, 1).unwrap();
        fs.extractor = "resnet".into();
        for name in ["a.feat", "b.csv"] {
            let p = dir.path().join(name);
            write_feature_file(&p, &fs).unwrap();
            let back = read_feature_file(&p).unwrap();
            assert_eq!(back.extractor, "resnet");
            assert_eq!(back.labels, fs.labels);
            assert_eq!(back.features, fs.features, "{name}");
        }
    }
}

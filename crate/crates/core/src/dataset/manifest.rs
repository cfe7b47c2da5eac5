//! CSV manifest ingestion: `path,model_id,identity_id`, paths relative to the
//! manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::Dataset;
use crate::error::{Error, Result};
use crate::image::{Image, LabeledImage};

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub model_id: u64,
    pub identity_id: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedRow {
    pub line: u64,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: Vec<SkippedRow>,
}

/// Label-level statistics of a manifest, no image decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestSummary {
    pub rows: usize,
    pub identities: usize,
    pub models: usize,
}

fn read_rows(path: &Path) -> Result<Vec<(u64, ManifestRow)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e),
        })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        let row = rec.map_err(|e| Error::ManifestRow {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(Error::EmptyManifest(path.to_path_buf()));
    }
    check_hierarchy(rows.iter().map(|(_, r)| r))?;
    Ok(rows)
}

fn check_hierarchy<'a>(rows: impl Iterator<Item = &'a ManifestRow>) -> Result<BTreeMap<u64, u64>> {
    let mut map = BTreeMap::new();
    for row in rows {
        if let Some(prev) = map.insert(row.identity_id, row.model_id) {
            if prev != row.model_id {
                return Err(Error::InconsistentHierarchy(row.identity_id));
            }
        }
    }
    Ok(map)
}

pub fn summarize_manifest(path: &Path) -> Result<ManifestSummary> {
    let rows = read_rows(path)?;
    let identities: BTreeSet<u64> = rows.iter().map(|(_, r)| r.identity_id).collect();
    let models: BTreeSet<u64> = rows.iter().map(|(_, r)| r.model_id).collect();
    Ok(ManifestSummary {
        rows: rows.len(),
        identities: identities.len(),
        models: models.len(),
    })
}

/// Loads every readable row, resizing to `canonical_size`. Unreadable images are
/// logged and listed in the report; label inconsistencies are hard errors.
/// Source ids are the manifest line numbers.
pub fn load_manifest(path: &Path, canonical_size: usize) -> Result<(Dataset, LoadReport)> {
    let rows = read_rows(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut report = LoadReport::default();
    let mut images = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let img_path = base.join(&row.path);
        match Image::load(&img_path, canonical_size) {
            Ok(pixels) => images.push(LabeledImage {
                pixels,
                model_id: row.model_id,
                identity_id: row.identity_id,
                source_id: line,
            }),
            Err(e) => {
                log::warn!("skipping manifest line {line}: {e}");
                report.skipped.push(SkippedRow {
                    line,
                    path: img_path,
                    reason: e.to_string(),
                });
            }
        }
    }
    if images.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no readable images in {}",
            path.display()
        )));
    }
    report.loaded = images.len();
    Ok((Dataset::new(images)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_png(dir: &Path, name: &str, size: u32) {
        let img = ::image::RgbImage::from_pixel(size, size, ::image::Rgb([10, 200, 30]));
        img.save(dir.join(name)).unwrap();
    }

    #[test]
    fn loads_and_resizes() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.png", "b.png", "c.png"] {
            write_png(dir.path(), n, 20);
        }
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,model_id,identity_id\na.png,1,10\nb.png,1,10\nc.png,2,20\n").unwrap();
        let (ds, report) = load_manifest(&m, 16).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(report.loaded, 3);
        assert!(report.skipped.is_empty());
        assert_eq!(ds.images()[0].pixels.width(), 16);
        assert_eq!(ds.identities().len(), 2);
    }

    #[test]
    fn unreadable_rows_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 8);
        fs::write(dir.path().join("broken.png"), b"not an image").unwrap();
        let m = dir.path().join("m.csv");
        fs::write(
            &m,
            "path,model_id,identity_id\na.png,1,1\nbroken.png,1,1\nmissing.png,1,2\n",
        )
        .unwrap();
        let (ds, report) = load_manifest(&m, 8).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.skipped.len(), 2);
        assert_eq!(report.skipped[0].line, 3);
    }

    #[test]
    fn inconsistent_hierarchy_names_identity() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,model_id,identity_id\na.png,2,7\nb.png,5,7\n").unwrap();
        let err = load_manifest(&m, 8).unwrap_err();
        assert_eq!(err.to_string(), "inconsistent hierarchy for identity 7");
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,model_id,identity_id\n").unwrap();
        assert!(matches!(load_manifest(&m, 8), Err(Error::EmptyManifest(_))));
        assert!(matches!(
            load_manifest(&dir.path().join("nope.csv"), 8),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn summary_counts_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        let mut text = String::from("path,model_id,identity_id\n");
        for i in 0..30 {
            text.push_str(&format!("x{i}.jpg,{},{}\n", i % 3, i % 6));
        }
        fs::write(&m, text).unwrap();
        let s = summarize_manifest(&m).unwrap();
        assert_eq!(
            s,
            ManifestSummary {
                rows: 30,
                identities: 6,
                models: 3
            }
        );
    }
}

//! Manifest CSV files: one `(frame_path, mask_path, score, producer)` row per
//! training candidate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub frame_path: String,
    pub mask_path: String,
    pub score: f64,
    pub producer: String,
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    // A header is written only with the first record.
    if rows.is_empty() {
        w.write_record(["frame_path", "mask_path", "score", "producer"])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: ManifestRow = rec.map_err(|e| csv_err(path, e))?;
        if !row.score.is_finite() {
            return Err(Error::invalid(format!(
                "{}: non-finite score for {}",
                path.display(),
                row.mask_path
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            ManifestRow {
                frame_path: "a/b.png".into(),
                mask_path: "m/b.png".into(),
                score: 0.75,
                producer: "videopca".into(),
            },
            ManifestRow {
                frame_path: "a,c.png".into(),
                mask_path: "m/c.png".into(),
                score: 0.1,
                producer: "tiny_unet".into(),
            },
        ];
        write_manifest(&p, &rows).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), rows);
        write_manifest(&p, &[]).unwrap();
        assert!(read_manifest(&p).unwrap().is_empty());
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim(), "frame_path,mask_path,score,producer");
    }
}

//! Dataset directories: one intensity and one label volume per case plus a
//! `TUDATA1` manifest listing case ids, split membership and file names.
//!
//! ```text
//! TUDATA1
//! case000 train case000_image.tuvol case000_labels.tuvol
//! ```

use std::fs;
use std::path::Path;

use transunet_core::data::{Case, Dataset, DatasetSplit};

use crate::error::{Error, Result};
use crate::text::tokens;
use crate::volume_file;

pub const MAGIC: &str = "TUDATA1";
pub const MANIFEST_NAME: &str = "dataset.tudata";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub case_id: String,
    pub split: String,
    pub image: String,
    pub labels: String,
}

pub fn image_name(id: &str) -> String {
    format!("{id}_image.tuvol")
}

pub fn labels_name(id: &str) -> String {
    format!("{id}_labels.tuvol")
}

pub fn entries(split: &DatasetSplit) -> Vec<ManifestEntry> {
    let mut out: Vec<ManifestEntry> = [("train", &split.train), ("val", &split.val), ("test", &split.test)]
        .into_iter()
        .flat_map(|(name, ids)| {
            ids.iter().map(move |id| ManifestEntry {
                case_id: id.clone(),
                split: name.to_string(),
                image: image_name(id),
                labels: labels_name(id),
            })
        })
        .collect();
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    out
}

pub fn encode(entries: &[ManifestEntry]) -> String {
    let mut out = format!("{MAGIC}\n");
    for e in entries {
        out += &format!("{} {} {} {}\n", e.case_id, e.split, e.image, e.labels);
    }
    out
}

pub fn decode(path: &Path, text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().unwrap_or("");
    if first.trim_end() != MAGIC {
        return Err(Error::parse(path, 0, format!("expected magic {MAGIC}")));
    }
    let mut offset = first.len();
    let mut out = Vec::new();
    for raw in lines {
        let t = tokens(raw, offset);
        match t[..] {
            [] => {}
            [(_, id), (so, split), (_, image), (_, labels)] => {
                if !matches!(split, "train" | "val" | "test") {
                    return Err(Error::parse(path, so, format!("unknown split '{split}'")));
                }
                out.push(ManifestEntry {
                    case_id: id.into(),
                    split: split.into(),
                    image: image.into(),
                    labels: labels.into(),
                });
            }
            _ => return Err(Error::parse(path, offset, format!("expected 4 fields, found {}", t.len()))),
        }
        offset += raw.len();
    }
    Ok(out)
}

/// Writes every case volume and the manifest into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for case in &dataset.cases {
        volume_file::write_intensity(&dir.join(image_name(&case.id)), &case.image)?;
        volume_file::write_labels(&dir.join(labels_name(&case.id)), &case.labels)?;
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, encode(&entries(&dataset.split))).map_err(Error::io(&path))
}

/// Loads the dataset described by `dir`'s manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let entries = decode(&path, &text)?;
    let mut split = DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    let mut cases = Vec::with_capacity(entries.len());
    for e in entries {
        let image = volume_file::read_intensity(&dir.join(&e.image))?;
        let label_path = dir.join(&e.labels);
        let labels = volume_file::read_labels(&label_path)?;
        image.same_grid(&labels).map_err(|err| Error::integrity(&label_path, err.to_string()))?;
        if let Some(first) = cases.first().map(|c: &Case| c.labels.classes) {
            if labels.classes != first {
                return Err(Error::integrity(&label_path, format!("{} classes, earlier cases have {first}", labels.classes)));
            }
        }
        match e.split.as_str() {
            "train" => split.train.push(e.case_id.clone()),
            "val" => split.val.push(e.case_id.clone()),
            _ => split.test.push(e.case_id.clone()),
        }
        cases.push(Case { id: e.case_id, image, labels });
    }
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    split.validate(&ids).map_err(|err| Error::integrity(&path, err.to_string()))?;
    Ok(Dataset { cases, split })
}

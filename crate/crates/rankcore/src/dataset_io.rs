//! Dataset directory: `manifest.json` plus one headerless CSV per sample.

use std::path::Path;

use rankcore_core::dataset::{Dataset, Provenance, TimeSeriesSample};
use serde::{Deserialize, Serialize};

use crate::csv::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, encode_name, read_json, write_json};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    pub subject_id: String,
    pub class_label: u8,
    pub site_id: Option<String>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub n_regions: usize,
    pub n_time: usize,
    pub provenance: Provenance,
    pub samples: Vec<SampleEntry>,
}

pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    d.validate()?;
    create_dir_all(&dir.join("samples"))?;
    let mut samples = Vec::with_capacity(d.len());
    for s in &d.samples {
        let file = format!("samples/{}.csv", encode_name(&s.sample_id));
        write_matrix(&dir.join(&file), &s.data)?;
        samples.push(SampleEntry {
            sample_id: s.sample_id.clone(),
            subject_id: s.subject_id.clone(),
            class_label: s.class_label,
            site_id: s.site_id.clone(),
            file,
        });
    }
    let manifest = Manifest {
        name: d.name.clone(),
        n_regions: d.n_regions().unwrap_or(0),
        n_time: d.samples.first().map_or(0, |s| s.n_time()),
        provenance: d.provenance.clone(),
        samples,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = read_json(&manifest_path)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let path = dir.join(&e.file);
        if !path.exists() {
            return Err(Error::format(&manifest_path, format!("sample `{}` refers to missing file {}", e.sample_id, path.display())));
        }
        let data = read_matrix(&path)?;
        if data.shape() != (manifest.n_regions, manifest.n_time) {
            return Err(Error::format(
                &path,
                format!("shape {}x{} disagrees with manifest {}x{}", data.rows(), data.cols(), manifest.n_regions, manifest.n_time),
            ));
        }
        samples.push(TimeSeriesSample {
            sample_id: e.sample_id.clone(),
            subject_id: e.subject_id.clone(),
            class_label: e.class_label,
            site_id: e.site_id.clone(),
            data,
        });
    }
    let d = Dataset { name: manifest.name, provenance: manifest.provenance, samples };
    d.validate()?;
    Ok(d)
}

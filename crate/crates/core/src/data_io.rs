//! On-disk dataset layout: a JSON manifest plus flat binary sample files.
//!
//! `features.bin` holds row-major little-endian f64 values, `labels.bin`
//! little-endian u32 labels. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, LongTailSpec, SynthMixtureSpec};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const FEATURE_FILE: &str = "features.bin";
const LABEL_FILE: &str = "labels.bin";

/// Provenance recorded alongside a saved split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitProvenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub longtail_spec: Option<LongTailSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_spec: Option<SynthMixtureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub num_samples: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub per_class_counts: Vec<usize>,
    pub feature_file: String,
    pub label_file: String,
    #[serde(default)]
    pub provenance: SplitProvenance,
}

/// Write a split into `dir` (created if missing).
pub fn save_split(dir: &Path, split: &DatasetSplit, provenance: SplitProvenance) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = SplitManifest {
        version: MANIFEST_VERSION,
        num_samples: split.len(),
        num_classes: split.num_classes(),
        input_dim: split.input_dim(),
        per_class_counts: split.per_class_counts().to_vec(),
        feature_file: FEATURE_FILE.to_string(),
        label_file: LABEL_FILE.to_string(),
        provenance,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let mut feat_bytes = Vec::with_capacity(split.len() * split.input_dim() * 8);
    for v in split.features().iter() {
        feat_bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(FEATURE_FILE), feat_bytes)?;

    let mut label_bytes = Vec::with_capacity(split.len() * 4);
    for &y in split.labels() {
        let y = u32::try_from(y)
            .map_err(|_| Error::validation(format!("label {y} exceeds u32 range")))?;
        label_bytes.extend_from_slice(&y.to_le_bytes());
    }
    fs::write(dir.join(LABEL_FILE), label_bytes)?;
    Ok(())
}

/// Read a split saved by [`save_split`].
pub fn load_split(dir: &Path) -> Result<(DatasetSplit, SplitManifest)> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: SplitManifest = serde_json::from_str(&manifest_text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::validation(format!(
            "unsupported dataset manifest version {} (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }

    let feat_bytes = fs::read(dir.join(&manifest.feature_file))?;
    let expected = manifest.num_samples * manifest.input_dim * 8;
    if feat_bytes.len() != expected {
        return Err(Error::validation(format!(
            "feature file holds {} bytes, manifest expects {expected}",
            feat_bytes.len()
        )));
    }
    let values: Vec<f64> = feat_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let features =
        ndarray::Array2::from_shape_vec((manifest.num_samples, manifest.input_dim), values)
            .map_err(|e| Error::shape(e.to_string()))?;

    let label_bytes = fs::read(dir.join(&manifest.label_file))?;
    if label_bytes.len() != manifest.num_samples * 4 {
        return Err(Error::validation(format!(
            "label file holds {} bytes, manifest expects {}",
            label_bytes.len(),
            manifest.num_samples * 4
        )));
    }
    let labels: Vec<usize> = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();

    let split = DatasetSplit::new(features, labels, manifest.num_classes)?;
    if split.per_class_counts() != manifest.per_class_counts.as_slice() {
        return Err(Error::validation(
            "per_class_counts in manifest disagree with label file".to_string(),
        ));
    }
    Ok((split, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_mixture;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = SynthMixtureSpec {
            num_classes: 3,
            input_dim: 5,
            class_separation: 2.0,
            within_class_std: 1.0,
            counts: vec![7, 4, 2],
            test_per_class: 3,
        };
        let (train, _) = make_synthetic_mixture(&spec, 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prov = SplitProvenance {
            seed: Some(123),
            synth_spec: Some(spec),
            ..Default::default()
        };
        save_split(dir.path(), &train, prov.clone()).unwrap();
        let (loaded, manifest) = load_split(dir.path()).unwrap();
        assert_eq!(manifest.provenance, prov);
        assert_eq!(loaded.labels(), train.labels());
        for (a, b) in loaded.features().iter().zip(train.features().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let spec = SynthMixtureSpec {
            num_classes: 2,
            input_dim: 2,
            class_separation: 2.0,
            within_class_std: 1.0,
            counts: vec![2, 2],
            test_per_class: 1,
        };
        let (train, _) = make_synthetic_mixture(&spec, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_split(dir.path(), &train, SplitProvenance::default()).unwrap();
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&manifest_path, text).unwrap();
        let err = load_split(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}

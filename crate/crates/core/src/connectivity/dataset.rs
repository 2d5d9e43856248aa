//! On-disk tensor dataset: `manifest.json` plus one little-endian f32 file
//! per window, axes `[feature][time][row][col][band]`.

use std::fs;
use std::path::Path;

use ndarray::Array5;
use serde::{Deserialize, Serialize};

use super::{ExtractionDiagnostics, Feature, WindowTensor};
use crate::dsp::BandSpec;
use crate::error::{Error, Result};
use crate::signal_io::Label;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub id: String,
    pub label: u8,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub shape: [usize; 5],
    pub feature_order: Vec<Feature>,
    pub bands: Vec<BandSpec>,
    pub fs: f64,
    pub config_hash: String,
    #[serde(default)]
    pub diagnostics: ExtractionDiagnostics,
    pub windows: Vec<WindowEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    pub manifest: DatasetManifest,
    pub tensors: Vec<WindowTensor>,
}

impl TensorDataset {
    pub fn new(
        tensors: Vec<WindowTensor>,
        bands: Vec<BandSpec>,
        fs: f64,
        config_hash: String,
        diagnostics: ExtractionDiagnostics,
    ) -> Result<TensorDataset> {
        let shape = tensors.first().ok_or(Error::EmptyDataset)?.shape();
        if shape[0] != Feature::ALL.len() || shape[4] != bands.len() {
            return Err(Error::Shape {
                expected: vec![Feature::ALL.len(), shape[1], shape[2], shape[3], bands.len()],
                got: shape.to_vec(),
            });
        }
        if let Some(t) = tensors.iter().find(|t| t.shape() != shape) {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                got: t.shape().to_vec(),
            });
        }
        let windows = tensors
            .iter()
            .enumerate()
            .map(|(k, t)| WindowEntry {
                id: t.id.clone(),
                label: t.label.as_u8(),
                file: format!("w{k:05}.bin"),
            })
            .collect();
        Ok(TensorDataset {
            manifest: DatasetManifest {
                format_version: FORMAT_VERSION,
                shape,
                feature_order: Feature::ALL.to_vec(),
                bands,
                fs,
                config_hash,
                diagnostics,
                windows,
            },
            tensors,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Writes all window files, then the manifest via a temporary rename.
pub fn save_dataset(ds: &TensorDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, entry) in ds.tensors.iter().zip(&ds.manifest.windows) {
        let mut bytes = Vec::with_capacity(t.values.len() * 4);
        // standard layout iterates in [feature][time][row][col][band] order
        for v in t.values.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let path = dir.join(&entry.file);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
    }
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&ds.manifest)?).map_err(|e| Error::io(&tmp, e))?;
    let dest = dir.join(MANIFEST);
    fs::rename(&tmp, &dest).map_err(|e| Error::io(dest, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TensorDataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::Format {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path,
            msg: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    if manifest.feature_order != Feature::ALL {
        return Err(Error::Format {
            path,
            msg: "feature order differs from the fixed order".into(),
        });
    }
    let [f, t, r, c, b] = manifest.shape;
    let n = f * t * r * c * b;
    let tensors = manifest
        .windows
        .iter()
        .map(|w| {
            let p = dir.join(&w.file);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if bytes.len() != 4 * n {
                return Err(Error::Format {
                    path: p,
                    msg: format!("expected {} bytes, found {}", 4 * n, bytes.len()),
                });
            }
            let data: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|ch| f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64)
                .collect();
            let label = Label::from_u8(w.label).ok_or_else(|| Error::Format {
                path: dir.join(MANIFEST),
                msg: format!("window {}: label {} not in {{0, 1}}", w.id, w.label),
            })?;
            Ok(WindowTensor {
                values: Array5::from_shape_vec((f, t, r, c, b), data).expect("length checked"),
                label,
                id: w.id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TensorDataset { manifest, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f32() {
        let mk = |k: usize, label| WindowTensor {
            values: Array5::from_shape_fn((7, 2, 3, 3, 5), |(f, t, i, j, b)| {
                (k * 1000 + f * 100 + t * 10 + i * 3 + j) as f64 + b as f64 * 0.25
            }),
            label,
            id: format!("rec@{k}.000s"),
        };
        let ds = TensorDataset::new(
            vec![mk(0, Label::Seizure), mk(1, Label::NonSeizure)],
            BandSpec::defaults(),
            256.0,
            "abc".into(),
            ExtractionDiagnostics::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);

        // first bytes are element [0][0][0][0][0], then the band axis varies fastest
        let raw = fs::read(dir.path().join("w00000.bin")).unwrap();
        assert_eq!(f32::from_le_bytes(raw[4..8].try_into().unwrap()), 0.25);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let t = WindowTensor {
            values: Array5::zeros((7, 1, 2, 2, 5)),
            label: Label::Seizure,
            id: "x".into(),
        };
        let ds = TensorDataset::new(vec![t], BandSpec::defaults(), 128.0, "h".into(), Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        fs::write(dir.path().join("w00000.bin"), [0u8; 8]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }
}

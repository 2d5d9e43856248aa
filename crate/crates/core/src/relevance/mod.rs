//! Per-feature relevance from concat-layer embeddings and the weights of
//! the first dense layer behind them.

mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use svg::render_svg;

use crate::connectivity::{Feature, WindowTensor};
use crate::error::{Error, Result};
use crate::model::{predict, FusionModel};
use crate::signal_io::Label;

/// Concat activations of one class, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub values: DMatrix<f64>,
    pub class: Label,
    pub groups: Vec<Feature>,
}

/// `w` is `N_in × N₂` (input-major), `b` has `N₂` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl DenseWeights {
    pub fn from_model(model: &FusionModel) -> Result<DenseWeights> {
        let (w, b) = model
            .concat_dense()
            .ok_or(Error::UnsupportedScheme(model.config.scheme))?;
        Ok(DenseWeights { w, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSource {
    #[default]
    TrueLabel,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Normalize the batch-averaged potentials per hidden neuron.
    #[default]
    Averaged,
    /// Normalize each sample's signed activation by the averaged
    /// potentials, rectify, then average over samples.
    PerSample,
}

/// Eval-mode concat activations of the samples of `class`.
pub fn collect_embeddings(
    model: &FusionModel,
    ds: &[WindowTensor],
    class: Label,
    source: ClassSource,
) -> Result<EmbeddingBatch> {
    let groups = model
        .group_map()
        .ok_or(Error::UnsupportedScheme(model.config.scheme))?
        .to_vec();
    let members: Vec<&WindowTensor> = match source {
        ClassSource::TrueLabel => ds.iter().filter(|t| t.label == class).collect(),
        ClassSource::Predicted => {
            let probs = predict(model, ds)?;
            ds.iter()
                .zip(probs)
                .filter(|(_, p)| (*p >= 0.5) == (class == Label::Seizure))
                .map(|(t, _)| t)
                .collect()
        }
    };
    if members.is_empty() {
        return Err(Error::invalid(format!("no samples of class {}", class.as_str())));
    }
    let rows = members.iter().map(|t| model.embedding(t)).collect::<Result<Vec<_>>>()?;
    let values = DMatrix::from_fn(rows.len(), groups.len(), |k, i| rows[k][i]);
    Ok(EmbeddingBatch { values, class, groups })
}

fn check_dims(batch: &EmbeddingBatch, w: &DenseWeights) -> Result<()> {
    if batch.values.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch.values.ncols() != w.w.nrows() || w.b.len() != w.w.ncols() {
        return Err(Error::Shape {
            expected: vec![w.w.nrows(), w.w.ncols()],
            got: vec![batch.values.ncols(), w.b.len()],
        });
    }
    Ok(())
}

/// `p_ij = mean_k |x_i^k w_ij + b_j|`.
pub fn activation_potentials(batch: &EmbeddingBatch, w: &DenseWeights) -> Result<DMatrix<f64>> {
    check_dims(batch, w)?;
    let x = &batch.values;
    let m = x.nrows() as f64;
    Ok(DMatrix::from_fn(w.w.nrows(), w.w.ncols(), |i, j| {
        x.column(i)
            .iter()
            .map(|xi| (xi * w.w[(i, j)] + w.b[j]).abs())
            .sum::<f64>()
            / m
    }))
}

/// `c_ij = p_ij / Σ_i' p_i'j`.
pub fn contributions(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut c = p.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        let total: f64 = col.sum();
        if !(total > 0.0) {
            return Err(Error::ZeroColumn(j));
        }
        col /= total;
    }
    Ok(c)
}

/// `c_i⁺ = Σ_j max(0, c_ij)`.
pub fn net_contribution(c: &DMatrix<f64>) -> Vec<f64> {
    c.row_iter().map(|r| r.iter().map(|v| v.max(0.0)).sum()).collect()
}

/// Per-sample variant: `a_ij^k / Σ_i' p_i'j`, rectified, summed over `j`
/// and averaged over samples.
pub fn per_sample_net_contribution(batch: &EmbeddingBatch, w: &DenseWeights) -> Result<Vec<f64>> {
    let p = activation_potentials(batch, w)?;
    let totals: Vec<f64> = p.column_iter().map(|c| c.sum()).collect();
    if let Some(j) = totals.iter().position(|t| !(*t > 0.0)) {
        return Err(Error::ZeroColumn(j));
    }
    let x = &batch.values;
    let m = x.nrows() as f64;
    Ok((0..w.w.nrows())
        .map(|i| {
            x.column(i)
                .iter()
                .map(|xi| {
                    (0..w.w.ncols())
                        .map(|j| ((xi * w.w[(i, j)] + w.b[j]) / totals[j]).max(0.0))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / m
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShare {
    pub feature: Feature,
    pub total: f64,
    pub percent: f64,
}

/// Sums `c_plus` over each feature's neuron block; features are reported
/// in the fixed order.
pub fn feature_relevance(c_plus: &[f64], groups: &[Feature]) -> Result<Vec<FeatureShare>> {
    if c_plus.len() != groups.len() {
        return Err(Error::Shape {
            expected: vec![groups.len()],
            got: vec![c_plus.len()],
        });
    }
    let mut totals: BTreeMap<Feature, f64> = BTreeMap::new();
    for (v, f) in c_plus.iter().zip(groups) {
        *totals.entry(*f).or_default() += v;
    }
    let grand: f64 = totals.values().sum();
    if !(grand > 0.0) {
        return Err(Error::ZeroRelevance);
    }
    Ok(totals
        .into_iter()
        .map(|(feature, total)| FeatureShare {
            feature,
            total,
            percent: 100.0 * total / grand,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRelevance {
    pub class: Label,
    pub samples: usize,
    pub features: Vec<FeatureShare>,
    #[serde(default)]
    pub c_plus: Vec<f64>,
}

impl ClassRelevance {
    /// Features by decreasing share.
    pub fn ranking(&self) -> Vec<Feature> {
        let mut v: Vec<&FeatureShare> = self.features.iter().collect();
        v.sort_by(|a, b| b.percent.total_cmp(&a.percent));
        v.into_iter().map(|s| s.feature).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub class_source: ClassSource,
    pub classes: Vec<ClassRelevance>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceOptions {
    pub variant: Variant,
    pub class_source: ClassSource,
}

pub fn class_relevance(
    model: &FusionModel,
    ds: &[WindowTensor],
    class: Label,
    opts: RelevanceOptions,
) -> Result<ClassRelevance> {
    let w = DenseWeights::from_model(model)?;
    let batch = collect_embeddings(model, ds, class, opts.class_source)?;
    let c_plus = match opts.variant {
        Variant::Averaged => net_contribution(&contributions(&activation_potentials(&batch, &w)?)?),
        Variant::PerSample => per_sample_net_contribution(&batch, &w)?,
    };
    Ok(ClassRelevance {
        class,
        samples: batch.values.nrows(),
        features: feature_relevance(&c_plus, &batch.groups)?,
        c_plus,
    })
}

/// Seizure then non-seizure; a class with no samples is skipped.
pub fn explain(
    model: &FusionModel,
    ds: &[WindowTensor],
    opts: RelevanceOptions,
    config_hash: impl Into<String>,
) -> Result<RelevanceReport> {
    if model.group_map().is_none() {
        return Err(Error::UnsupportedScheme(model.config.scheme));
    }
    let mut classes = Vec::new();
    for class in [Label::Seizure, Label::NonSeizure] {
        match class_relevance(model, ds, class, opts) {
            Ok(c) => classes.push(c),
            Err(Error::InvalidArgument(msg)) => log::warn!("relevance: {msg}"),
            Err(e) => return Err(e),
        }
    }
    if classes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(RelevanceReport {
        config_hash: config_hash.into(),
        variant: opts.variant,
        class_source: opts.class_source,
        classes,
    })
}

impl RelevanceReport {
    pub fn class(&self, label: Label) -> Option<&ClassRelevance> {
        self.classes.iter().find(|c| c.class == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,class,percent,c_plus_sum\n");
        for c in &self.classes {
            for s in &c.features {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    s.feature.as_str(),
                    c.class.as_str(),
                    s.percent,
                    s.total
                ));
            }
        }
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<RelevanceReport> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

//! The seven connectivity measures and their reduction to per-band matrices.

mod dataset;
mod plv;
mod tensor;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dataset::{
    load_dataset, save_dataset, DatasetManifest, TensorDataset, WindowEntry, FORMAT_VERSION as DATASET_FORMAT_VERSION,
    MANIFEST,
};
pub use plv::{plv_from_phases, plv_matrix};
pub(crate) use tensor::hex_digest;
pub use tensor::{
    build_feature_tensor, extract_all, extract_window, normalize_features, ExtractionDiagnostics, NormStats,
    OrderPolicy, PipelineConfig, PipelineMode, WindowTensor,
};

use crate::dsp::{BandSpec, Rhythm};
use crate::error::{Error, Result};
use crate::mvar::SpectralDecomposition;

/// Feature-axis order of every window tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "ISM")]
    Ism,
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "COH")]
    Coh,
    #[serde(rename = "PDC")]
    Pdc,
    #[serde(rename = "PCOH")]
    Pcoh,
    #[serde(rename = "PLV")]
    Plv,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Sm,
        Feature::Ism,
        Feature::Dc,
        Feature::Coh,
        Feature::Pdc,
        Feature::Pcoh,
        Feature::Plv,
    ];

    pub fn index(self) -> usize {
        Feature::ALL.iter().position(|&f| f == self).expect("listed")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Sm => "SM",
            Feature::Ism => "ISM",
            Feature::Dc => "DC",
            Feature::Coh => "COH",
            Feature::Pdc => "PDC",
            Feature::Pcoh => "PCOH",
            Feature::Plv => "PLV",
        }
    }

    /// Unbounded measures get `ln(1 + ·)` after band averaging.
    pub fn is_compressed(self) -> bool {
        matches!(self, Feature::Sm | Feature::Ism)
    }
}

/// One complex C×C matrix per grid frequency.
pub type FrequencyMatrices = Vec<DMatrix<Complex64>>;

fn normalized_by_diagonal(m: &[DMatrix<Complex64>], freqs: &[f64], what: &'static str) -> Result<FrequencyMatrices> {
    m.iter()
        .zip(freqs)
        .map(|(s, &f)| {
            let c = s.nrows();
            let diag: Vec<f64> = (0..c).map(|i| s[(i, i)].re).collect();
            if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositiveDiagonal {
                    what,
                    index,
                    value,
                    freq_hz: f,
                });
            }
            Ok(DMatrix::from_fn(c, c, |i, j| {
                if i == j {
                    Complex64::new(1.0, 0.0)
                } else {
                    s[(i, j)] / (diag[i] * diag[j]).sqrt()
                }
            }))
        })
        .collect()
}

/// `Coh_ij = S_ij / √(S_ii S_jj)`.
pub fn coherence(sd: &SpectralDecomposition) -> Result<FrequencyMatrices> {
    normalized_by_diagonal(&sd.s, &sd.freqs, "S")
}

/// `PCoh_ij = P_ij / √(P_ii P_jj)`.
pub fn partial_coherence(sd: &SpectralDecomposition) -> Result<FrequencyMatrices> {
    normalized_by_diagonal(&sd.p, &sd.freqs, "P")
}

fn noise_std(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..sigma.nrows())
        .map(|m| {
            let v = sigma[(m, m)];
            if v > 0.0 {
                Ok(v.sqrt())
            } else {
                Err(Error::invalid(format!("noise variance σ_{m}² = {v} must be > 0")))
            }
        })
        .collect()
}

/// `DC_ij = σ_j H_ij / √(Σ_m σ_m² |H_im|²)`; off-diagonal Σ is not used.
pub fn directed_coherence(sd: &SpectralDecomposition, sigma: &DMatrix<f64>) -> Result<FrequencyMatrices> {
    let sd_m = noise_std(sigma)?;
    Ok(sd
        .h
        .iter()
        .map(|h| {
            let c = h.nrows();
            let denom: Vec<f64> = (0..c)
                .map(|i| {
                    (0..c)
                        .map(|m| sd_m[m].powi(2) * h[(i, m)].norm_sqr())
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            DMatrix::from_fn(c, c, |i, j| h[(i, j)] * sd_m[j] / denom[i])
        })
        .collect())
}

/// `PDC_ij = (1/σ_j) Ā_ij / √(Σ_m |Ā_im|² / σ_m²)`, normalized along row `i`.
pub fn partial_directed_coherence(sd: &SpectralDecomposition, sigma: &DMatrix<f64>) -> Result<FrequencyMatrices> {
    let sd_m = noise_std(sigma)?;
    Ok(sd
        .abar
        .iter()
        .map(|a| {
            let c = a.nrows();
            let denom: Vec<f64> = (0..c)
                .map(|i| {
                    (0..c)
                        .map(|m| a[(i, m)].norm_sqr() / sd_m[m].powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            DMatrix::from_fn(c, c, |i, j| a[(i, j)] / (sd_m[j] * denom[i]))
        })
        .collect())
}

/// Real C×C matrix per band for one measure.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrixSet {
    pub feature: Feature,
    pub bands: Vec<Rhythm>,
    pub values: Vec<DMatrix<f64>>,
}

/// Mean of `|M_ij(f)|²` over the grid frequencies in `[low, high)` of each
/// band, followed by `ln(1 + ·)` for SM and ISM.
pub fn band_aggregate(
    feature: Feature,
    measure: &[DMatrix<Complex64>],
    freqs: &[f64],
    bands: &[BandSpec],
) -> Result<BandMatrixSet> {
    let c = measure.first().map(|m| m.nrows()).unwrap_or(0);
    let values = bands
        .iter()
        .map(|b| {
            let idx: Vec<usize> = freqs
                .iter()
                .enumerate()
                .filter(|(_, &f)| f >= b.low_hz && f < b.high_hz)
                .map(|(k, _)| k)
                .collect();
            if idx.is_empty() {
                return Err(Error::EmptyBand {
                    low: b.low_hz,
                    high: b.high_hz,
                });
            }
            let mut acc = DMatrix::<f64>::zeros(c, c);
            for &k in &idx {
                acc += measure[k].map(|z| z.norm_sqr());
            }
            acc /= idx.len() as f64;
            if feature.is_compressed() {
                acc.apply(|v| *v = v.ln_1p());
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BandMatrixSet {
        feature,
        bands: bands.iter().map(|b| b.name).collect(),
        values,
    })
}

/// SM, ISM, DC, COH, PDC and PCOH from one decomposition, in feature order.
pub fn spectral_measures(sd: &SpectralDecomposition) -> Result<Vec<(Feature, FrequencyMatrices)>> {
    Ok(vec![
        (Feature::Sm, sd.s.clone()),
        (Feature::Ism, sd.p.clone()),
        (Feature::Dc, directed_coherence(sd, &sd.sigma)?),
        (Feature::Coh, coherence(sd)?),
        (Feature::Pdc, partial_directed_coherence(sd, &sd.sigma)?),
        (Feature::Pcoh, partial_coherence(sd)?),
    ])
}

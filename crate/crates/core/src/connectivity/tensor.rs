use std::ops::AddAssign;

use ndarray::{s, Array2, Array5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{band_aggregate, plv_matrix, spectral_measures, Feature};
use crate::dsp::{self, design_bandpass, design_bandpass_hz, filtfilt, BandSpec, FilterSpec};
use crate::error::{Error, Result};
use crate::mvar::{self, fit_mvar, select_order, spectral_decomposition, MvarModel};
use crate::signal_io::{split_rows, Label, Labeled, LabeledWindow, DEFAULT_SUBWINDOWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// One MVAR per broadband sub-window; all bands read off its spectrum.
    Broadband,
    /// One MVAR per band-filtered sub-window, read over that band only.
    PerBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum OrderPolicy {
    Fixed { order: usize },
    Aic { max_order: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub bands: Vec<BandSpec>,
    pub order: OrderPolicy,
    pub ridge: f64,
    pub n_freqs: usize,
    pub filter_order: usize,
    pub subwindows: usize,
    pub broadband_hz: (f64, f64),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: PipelineMode::Broadband,
            bands: BandSpec::defaults(),
            order: OrderPolicy::Fixed {
                order: mvar::DEFAULT_ORDER,
            },
            ridge: mvar::DEFAULT_RIDGE,
            n_freqs: mvar::DEFAULT_N_FREQS,
            filter_order: dsp::DEFAULT_ORDER,
            subwindows: DEFAULT_SUBWINDOWS,
            broadband_hz: dsp::BROADBAND_HZ,
        }
    }
}

impl PipelineConfig {
    /// Checks everything that can be checked before touching data.
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::in_field("bands")(Error::invalid("at least one band required")));
        }
        for (i, b) in self.bands.iter().enumerate() {
            b.validate(fs).map_err(Error::in_field(format!("bands[{i}]")))?;
        }
        design_bandpass_hz(self.broadband_hz.0, self.broadband_hz.1, fs, self.filter_order)
            .map_err(Error::in_field("broadband_hz"))?;
        match self.order {
            OrderPolicy::Fixed { order: 0 } | OrderPolicy::Aic { max_order: 0 } => {
                return Err(Error::in_field("order")(Error::invalid("must be ≥ 1")))
            }
            _ => {}
        }
        if self.n_freqs == 0 {
            return Err(Error::in_field("n_freqs")(Error::invalid("must be ≥ 1")));
        }
        if self.subwindows == 0 {
            return Err(Error::in_field("subwindows")(Error::invalid("must be ≥ 1")));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::in_field("ridge")(Error::invalid("must be ≥ 0")));
        }
        let grid: Vec<f64> = (1..=self.n_freqs)
            .map(|k| k as f64 * (fs / 2.0) / self.n_freqs as f64)
            .collect();
        for b in &self.bands {
            if !grid.iter().any(|&f| f >= b.low_hz && f < b.high_hz) {
                return Err(Error::in_field("bands")(Error::EmptyBand {
                    low: b.low_hz,
                    high: b.high_hz,
                }));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-window feature tensor, axes `[feature][time][row][col][band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    pub values: Array5<f64>,
    pub label: Label,
    pub id: String,
}

impl WindowTensor {
    pub fn shape(&self) -> [usize; 5] {
        let d = self.values.dim();
        [d.0, d.1, d.2, d.3, d.4]
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }
}

impl Labeled for WindowTensor {
    fn label(&self) -> Label {
        self.label
    }
}

/// Counters surfaced in run manifests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionDiagnostics {
    pub windows: usize,
    pub fits: usize,
    pub unstable_fits: usize,
    pub jitter_events: usize,
}

impl AddAssign<&ExtractionDiagnostics> for ExtractionDiagnostics {
    fn add_assign(&mut self, o: &ExtractionDiagnostics) {
        self.windows += o.windows;
        self.fits += o.fits;
        self.unstable_fits += o.unstable_fits;
        self.jitter_events += o.jitter_events;
    }
}

fn filter_columns(f: &FilterSpec, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x.dim());
    for (ch, col) in x.columns().into_iter().enumerate() {
        let y = filtfilt(f, &col.to_vec())?;
        out.column_mut(ch).assign(&ndarray::Array1::from(y));
    }
    Ok(out)
}

fn fit(x: &Array2<f64>, cfg: &PipelineConfig, fs: f64) -> Result<MvarModel> {
    match cfg.order {
        OrderPolicy::Fixed { order } => fit_mvar(x.view(), order, cfg.ridge, fs),
        OrderPolicy::Aic { max_order } => {
            let sel = select_order(x.view(), max_order, cfg.ridge, fs)?;
            fit_mvar(x.view(), sel.order, cfg.ridge, fs)
        }
    }
}

/// Fits one sub-window and writes the six spectral features for `bands`
/// into `out[.., t, .., .., band_offset..]`.
#[allow(clippy::too_many_arguments)]
fn spectral_block(
    x: &Array2<f64>,
    cfg: &PipelineConfig,
    fs: f64,
    bands: &[BandSpec],
    t: usize,
    band_offset: usize,
    out: &mut Array5<f64>,
    diag: &mut ExtractionDiagnostics,
) -> Result<()> {
    let model = fit(x, cfg, fs)?;
    diag.fits += 1;
    if !model.is_stable() {
        diag.unstable_fits += 1;
        log::warn!(
            "sub-window {t}: fitted MVAR is unstable (ρ = {:.4})",
            model.spectral_radius()
        );
    }
    let sd = spectral_decomposition(&model, cfg.n_freqs)?;
    if sd.jitter_applied {
        diag.jitter_events += 1;
    }
    for (feature, measure) in spectral_measures(&sd)? {
        let set = band_aggregate(feature, &measure, &sd.freqs, bands)?;
        for (b, m) in set.values.iter().enumerate() {
            let mut plane = out.slice_mut(s![feature.index(), t, .., .., band_offset + b]);
            plane.zip_mut_with(&Array2::from_shape_fn(m.shape(), |(i, j)| m[(i, j)]), |o, v| *o = *v);
        }
    }
    Ok(())
}

fn with_index(index: usize) -> impl Fn(Error) -> Error {
    move |e| Error::SubWindow {
        index,
        source: Box::new(e),
    }
}

/// Tensor plus fit diagnostics for one window.
pub fn extract_window(window: &LabeledWindow, cfg: &PipelineConfig) -> Result<(WindowTensor, ExtractionDiagnostics)> {
    let fs = window.fs;
    cfg.validate(fs)?;
    let c = window.samples.ncols();
    let t_n = cfg.subwindows;
    let b_n = cfg.bands.len();
    let mut values = Array5::<f64>::zeros((Feature::ALL.len(), t_n, c, c, b_n));
    let mut diag = ExtractionDiagnostics {
        windows: 1,
        ..Default::default()
    };

    match cfg.mode {
        PipelineMode::Broadband => {
            let f = design_bandpass_hz(cfg.broadband_hz.0, cfg.broadband_hz.1, fs, cfg.filter_order)?;
            let parts = split_rows(&filter_columns(&f, &window.samples)?, t_n)?;
            for (t, x) in parts.iter().enumerate() {
                spectral_block(x, cfg, fs, &cfg.bands, t, 0, &mut values, &mut diag).map_err(with_index(t))?;
            }
        }
        PipelineMode::PerBand => {
            for (b, band) in cfg.bands.iter().enumerate() {
                let f = design_bandpass(band, fs, cfg.filter_order)?;
                let parts = split_rows(&filter_columns(&f, &window.samples)?, t_n)?;
                for (t, x) in parts.iter().enumerate() {
                    spectral_block(x, cfg, fs, std::slice::from_ref(band), t, b, &mut values, &mut diag)
                        .map_err(with_index(t))?;
                }
            }
        }
    }

    let plv = Feature::Plv.index();
    for (b, band) in cfg.bands.iter().enumerate() {
        for (t, m) in plv_matrix(window, band, t_n, cfg.filter_order)?.iter().enumerate() {
            let mut plane = values.slice_mut(s![plv, t, .., .., b]);
            plane.zip_mut_with(&Array2::from_shape_fn((c, c), |(i, j)| m[(i, j)]), |o, v| *o = *v);
        }
    }

    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "window {}: non-finite feature value at flat index {pos}",
            window.id()
        )));
    }
    Ok((
        WindowTensor {
            values,
            label: window.label,
            id: window.id(),
        },
        diag,
    ))
}

pub fn build_feature_tensor(window: &LabeledWindow, cfg: &PipelineConfig) -> Result<WindowTensor> {
    extract_window(window, cfg).map(|(t, _)| t)
}

/// Parallel over windows; output order follows the input order.
pub fn extract_all(
    windows: &[LabeledWindow],
    cfg: &PipelineConfig,
) -> Result<(Vec<WindowTensor>, ExtractionDiagnostics)> {
    let results: Vec<_> = windows.par_iter().map(|w| extract_window(w, cfg)).collect();
    let mut tensors = Vec::with_capacity(windows.len());
    let mut diag = ExtractionDiagnostics::default();
    for r in results {
        let (t, d) = r?;
        diag += &d;
        tensors.push(t);
    }
    Ok((tensors, diag))
}

/// Per-(feature, band) z-score statistics over all time steps and entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: usize,
    pub bands: usize,
    /// Row-major `[feature][band]`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(train: &[WindowTensor]) -> Result<NormStats> {
        let first = train.first().ok_or(Error::EmptyDataset)?;
        if train.len() < 2 {
            return Err(Error::invalid("normalization needs at least 2 training tensors"));
        }
        let shape = first.shape();
        for t in train {
            if t.shape() != shape {
                return Err(Error::Shape {
                    expected: shape.to_vec(),
                    got: t.shape().to_vec(),
                });
            }
        }
        let (nf, nb) = (shape[0], shape[4]);
        let mut mean = vec![0.0; nf * nb];
        let mut std = vec![0.0; nf * nb];
        for f in 0..nf {
            for b in 0..nb {
                let planes: Vec<_> = train.iter().map(|t| t.values.slice(s![f, .., .., .., b])).collect();
                let n: usize = planes.iter().map(|p| p.len()).sum();
                let mu = planes.iter().map(|p| p.sum()).sum::<f64>() / n as f64;
                let var = planes
                    .iter()
                    .map(|p| p.iter().map(|v| (v - mu).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / n as f64;
                mean[f * nb + b] = mu;
                std[f * nb + b] = var.sqrt();
            }
        }
        Ok(NormStats {
            features: nf,
            bands: nb,
            mean,
            std,
        })
    }

    fn is_flat(&self, k: usize) -> bool {
        self.std[k] <= 1e-12 * self.mean[k].abs().max(1.0)
    }

    pub fn apply(&self, t: &mut WindowTensor) -> Result<()> {
        let shape = t.shape();
        if shape[0] != self.features || shape[4] != self.bands {
            return Err(Error::Shape {
                expected: vec![self.features, shape[1], shape[2], shape[3], self.bands],
                got: shape.to_vec(),
            });
        }
        for f in 0..self.features {
            for b in 0..self.bands {
                let k = f * self.bands + b;
                if self.is_flat(k) {
                    continue;
                }
                let (mu, sd) = (self.mean[k], self.std[k]);
                t.values.slice_mut(s![f, .., .., .., b]).mapv_inplace(|v| (v - mu) / sd);
            }
        }
        Ok(())
    }

    pub fn applied(&self, ts: &[WindowTensor]) -> Result<Vec<WindowTensor>> {
        ts.iter()
            .map(|t| {
                let mut t = t.clone();
                self.apply(&mut t)?;
                Ok(t)
            })
            .collect()
    }
}

pub fn normalize_features(train: &[WindowTensor]) -> Result<(NormStats, Vec<WindowTensor>)> {
    let stats = NormStats::fit(train)?;
    let out = stats.applied(train)?;
    Ok((stats, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{generate_synthetic, SynthClass, SynthSpec};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_window(c: usize, fs: f64, seed: u64) -> LabeledWindow {
        let n = (20.0 * fs) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LabeledWindow {
            samples: Array2::from_shape_fn((n, c), |_| StandardNormal.sample(&mut rng)),
            label: Label::NonSeizure,
            source_id: format!("noise{seed}"),
            offset_s: 0.0,
            fs,
        }
    }

    #[test]
    fn synthetic_window_shape_and_ranges() {
        let (rec, _) = generate_synthetic(&SynthSpec::new(SynthClass::Coupled, 4, 128.0, 40.0, 0.4, 1)).unwrap();
        let w = LabeledWindow {
            samples: rec.samples.slice(s![..2560, ..]).to_owned(),
            label: Label::Seizure,
            source_id: rec.id.clone(),
            offset_s: 0.0,
            fs: rec.fs,
        };
        let (t, diag) = extract_window(&w, &PipelineConfig::default()).unwrap();
        assert_eq!(t.shape(), [7, 10, 4, 4, 5]);
        assert_eq!(diag.fits, 10);
        for f in [Feature::Dc, Feature::Coh, Feature::Pdc, Feature::Pcoh, Feature::Plv] {
            let plane = t.values.slice(s![f.index(), .., .., .., ..]);
            assert!(plane.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)), "{f:?}");
        }
        for f in [Feature::Sm, Feature::Ism] {
            assert!(t.values.slice(s![f.index(), .., .., .., ..]).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn white_noise_coherence_is_low() {
        let (t, _) = extract_window(&noise_window(4, 128.0, 11), &PipelineConfig::default()).unwrap();
        let coh = t.values.slice(s![Feature::Coh.index(), .., .., .., ..]);
        let (mut sum, mut n) = (0.0, 0);
        for ((_, i, j, _), v) in coh.indexed_iter() {
            if i != j {
                sum += v;
                n += 1;
            }
        }
        assert!(sum / (n as f64) < 0.2, "{}", sum / n as f64);
    }

    #[test]
    fn per_band_mode_shape() {
        let cfg = PipelineConfig {
            mode: PipelineMode::PerBand,
            order: OrderPolicy::Fixed { order: 3 },
            ..Default::default()
        };
        let (t, diag) = extract_window(&noise_window(3, 128.0, 2), &cfg).unwrap();
        assert_eq!(t.shape(), [7, 10, 3, 3, 5]);
        assert_eq!(diag.fits, 50);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate(256.0).is_ok());
        cfg.bands[4].high_hz = 200.0;
        assert!(cfg.validate(256.0).is_err());
        let zero = PipelineConfig {
            order: OrderPolicy::Fixed { order: 0 },
            ..Default::default()
        };
        assert!(zero.validate(256.0).is_err());
        assert_eq!(PipelineConfig::default().hash(), PipelineConfig::default().hash());
        assert_ne!(PipelineConfig::default().hash(), zero.hash());
    }

    fn tensor(seed: u64, label: Label) -> WindowTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Array5::from_shape_fn((3, 2, 2, 2, 2), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            5.0 + 2.0 * z
        });
        values.slice_mut(s![1, .., .., .., 0]).fill(7.5);
        WindowTensor {
            values,
            label,
            id: format!("w{seed}"),
        }
    }

    #[test]
    fn normalization_statistics() {
        let train: Vec<_> = (0..6)
            .map(|s| tensor(s, Label::from_u8((s % 2) as u8).unwrap()))
            .collect();
        let (stats, normed) = normalize_features(&train).unwrap();
        for f in 0..3 {
            for b in 0..2 {
                let vals: Vec<f64> = normed
                    .iter()
                    .flat_map(|t| t.values.slice(s![f, .., .., .., b]).to_owned().into_iter())
                    .collect();
                let n = vals.len() as f64;
                let mu = vals.iter().sum::<f64>() / n;
                let sd = (vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
                if (f, b) == (1, 0) {
                    assert!(vals.iter().all(|&v| v == 7.5));
                } else {
                    assert!(mu.abs() < 1e-9);
                    assert!((sd - 1.0).abs() < 1e-6);
                }
            }
        }

        let test = vec![tensor(100, Label::Seizure), tensor(101, Label::NonSeizure)];
        let a = stats.applied(&test).unwrap();
        let mut rev = test.clone();
        rev.reverse();
        let mut b = stats.applied(&rev).unwrap();
        b.reverse();
        assert_eq!(a, b);

        assert!(matches!(NormStats::fit(&[]), Err(Error::EmptyDataset)));
        assert!(NormStats::fit(&train[..1]).is_err());
    }
}

//! Synthetic multichannel recordings: independent resonant AR(2) channels,
//! optionally with a lag-1 ring coupling switched on inside an annotated
//! "seizure" segment. Under coupling strength `s` each channel's own
//! recursion is weighted by `1 - s` and its ring predecessor's previous
//! sample by `s`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AnnotationSet, Recording, SeizureInterval, WINDOW_S};
use crate::error::{Error, Result};
use crate::mvar::MvarModel;

const POLE_RADIUS: f64 = 0.75;
const PEAK_RANGE_HZ: (f64, f64) = (6.0, 14.0);
const AMPLITUDE: f64 = 10.0;
const BURN_IN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthClass {
    Coupled,
    Uncoupled,
}

impl SynthClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthClass::Coupled => "coupled",
            SynthClass::Uncoupled => "uncoupled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class: SynthClass,
    pub channels: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub coupling_strength: f64,
    pub seed: u64,
    /// Coupled segment; defaults to the middle half of the recording.
    #[serde(default)]
    pub onset_s: Option<f64>,
    #[serde(default)]
    pub offset_s: Option<f64>,
}

impl SynthSpec {
    pub fn new(
        class: SynthClass,
        channels: usize,
        fs: f64,
        duration_s: f64,
        coupling_strength: f64,
        seed: u64,
    ) -> Self {
        SynthSpec {
            class,
            channels,
            fs,
            duration_s,
            coupling_strength,
            seed,
            onset_s: None,
            offset_s: None,
        }
    }

    pub fn segment_s(&self) -> (f64, f64) {
        (
            self.onset_s.unwrap_or(0.25 * self.duration_s),
            self.offset_s.unwrap_or(0.75 * self.duration_s),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(Error::TooFewChannels(self.channels));
        }
        if !(self.fs > 0.0) {
            return Err(Error::invalid(format!("fs must be > 0, got {}", self.fs)));
        }
        if !(self.duration_s >= WINDOW_S) {
            return Err(Error::invalid(format!(
                "duration_s must be ≥ {WINDOW_S}, got {}",
                self.duration_s
            )));
        }
        if !self.coupling_strength.is_finite() || self.coupling_strength < 0.0 {
            return Err(Error::invalid("coupling_strength must be finite and ≥ 0"));
        }
        let (a, b) = self.segment_s();
        if !(0.0 <= a && a < b && b <= self.duration_s) {
            return Err(Error::invalid(format!(
                "coupled segment [{a}, {b}) outside the recording"
            )));
        }
        Ok(())
    }
}

fn channel_ar2<R: Rng>(channels: usize, fs: f64, rng: &mut R) -> Vec<(f64, f64)> {
    (0..channels)
        .map(|_| {
            let f = rng.random_range(PEAK_RANGE_HZ.0..PEAK_RANGE_HZ.1).min(0.45 * fs);
            let theta = 2.0 * PI * f / fs;
            (2.0 * POLE_RADIUS * theta.cos(), -POLE_RADIUS * POLE_RADIUS)
        })
        .collect()
}

fn var_model(ar: &[(f64, f64)], coupling: f64, fs: f64) -> Result<MvarModel> {
    let c = ar.len();
    let mut a1 = DMatrix::zeros(c, c);
    let mut a2 = DMatrix::zeros(c, c);
    let own = 1.0 - coupling;
    for (i, &(p1, p2)) in ar.iter().enumerate() {
        a1[(i, i)] = own * p1;
        a2[(i, i)] = own * p2;
        if coupling != 0.0 {
            a1[(i, (i + c - 1) % c)] += coupling;
        }
    }
    MvarModel::new(vec![a1, a2], DMatrix::identity(c, c), fs)
}

/// Rescale each channel of `rows` to zero mean and standard deviation
/// `AMPLITUDE`.
fn standardize(y: &mut Array2<f64>, rows: std::ops::Range<usize>) {
    for mut col in y.columns_mut() {
        let seg = col.slice_mut(ndarray::s![rows.clone()]);
        let n = seg.len() as f64;
        let mean = seg.sum() / n;
        let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { AMPLITUDE / var.sqrt() } else { 0.0 };
        for v in col.slice_mut(ndarray::s![rows.clone()]).iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
}

/// Deterministic in `spec.seed`. Each segment is standardized per channel,
/// so coupled and uncoupled stretches differ in cross-channel structure but
/// not in amplitude. Zero coupling strength yields the uncoupled recording.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Recording, AnnotationSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.channels;
    let n = (spec.duration_s * spec.fs).round() as usize;
    let ar = channel_ar2(c, spec.fs, &mut rng);
    let base = var_model(&ar, 0.0, spec.fs)?;

    let coupled = spec.class == SynthClass::Coupled && spec.coupling_strength > 0.0;
    let model = var_model(&ar, spec.coupling_strength, spec.fs)?;
    if coupled {
        let rho = model.spectral_radius();
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
    }
    let (onset, offset) = spec.segment_s();
    let seg = if coupled {
        (
            (onset * spec.fs).round() as usize,
            ((offset * spec.fs).round() as usize).min(n),
        )
    } else {
        (n, n)
    };

    let total = n + BURN_IN;
    let mut y = Array2::<f64>::zeros((n, c));
    let mut hist = vec![vec![0.0; c]; 2];
    for t in 0..total {
        let idx = t.checked_sub(BURN_IN);
        let m = match idx {
            Some(i) if i >= seg.0 && i < seg.1 => &model,
            _ => &base,
        };
        let mut cur: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        for (lag, a) in m.coeffs.iter().enumerate() {
            for i in 0..c {
                for j in 0..c {
                    cur[i] += a[(i, j)] * hist[lag][j];
                }
            }
        }
        hist[1] = std::mem::replace(&mut hist[0], cur.clone());
        if let Some(i) = idx {
            for j in 0..c {
                y[[i, j]] = cur[j];
            }
        }
    }

    let mut ann = AnnotationSet::default();
    if coupled {
        for r in [0..seg.0, seg.0..seg.1, seg.1..n] {
            if !r.is_empty() {
                standardize(&mut y, r);
            }
        }
        ann.seizure_intervals
            .push(SeizureInterval::new(seg.0 as f64 / spec.fs, seg.1 as f64 / spec.fs));
    } else {
        standardize(&mut y, 0..n);
    }

    let names = (0..c).map(|i| format!("ch{}", i + 1)).collect();
    let rec = Recording::new(
        y,
        spec.fs,
        names,
        format!("synth-{}-{}", spec.class.as_str(), spec.seed),
    )?;
    Ok((rec, ann))
}

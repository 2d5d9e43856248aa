//! Butterworth band-pass design as cascaded second-order sections.
//!
//! The analog low-pass prototype of order `order / 2` is mapped to a band-pass
//! with the usual `s -> (s^2 + w0^2) / (s * bw)` substitution, the band edges
//! are pre-warped, and every pole is taken to the z-plane with the bilinear
//! transform. Each section carries one conjugate pole pair (or two real poles)
//! plus the zeros at `z = 1` and `z = -1`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five canonical EEG rhythms, in the fixed band-axis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rhythm {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Rhythm {
    pub const ALL: [Rhythm; 5] = [Rhythm::Delta, Rhythm::Theta, Rhythm::Alpha, Rhythm::Beta, Rhythm::Gamma];

    pub fn as_str(self) -> &'static str {
        match self {
            Rhythm::Delta => "delta",
            Rhythm::Theta => "theta",
            Rhythm::Alpha => "alpha",
            Rhythm::Beta => "beta",
            Rhythm::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: Rhythm,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(name: Rhythm, low_hz: f64, high_hz: f64) -> Self {
        BandSpec { name, low_hz, high_hz }
    }

    /// Default rhythm table: δ 2–4, θ 4–8, α 8–13, β 13–30, γ 30–45 Hz.
    pub fn defaults() -> Vec<BandSpec> {
        vec![
            BandSpec::new(Rhythm::Delta, 2.0, 4.0),
            BandSpec::new(Rhythm::Theta, 4.0, 8.0),
            BandSpec::new(Rhythm::Alpha, 8.0, 13.0),
            BandSpec::new(Rhythm::Beta, 13.0, 30.0),
            BandSpec::new(Rhythm::Gamma, 30.0, 45.0),
        ]
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        validate_edges(self.name.as_str(), self.low_hz, self.high_hz, fs)
    }
}

fn validate_edges(name: &str, low_hz: f64, high_hz: f64, fs: f64) -> Result<()> {
    let bad = |msg: String| {
        Err(Error::InvalidBand {
            name: name.to_string(),
            msg,
        })
    };
    if !(fs > 0.0) || !fs.is_finite() {
        return bad(format!("sampling rate {fs} must be positive"));
    }
    if !(low_hz > 0.0) {
        return bad(format!("low edge {low_hz} Hz must be > 0"));
    }
    if !(high_hz < fs / 2.0) {
        return bad(format!(
            "high edge {high_hz} Hz must be below Nyquist ({} Hz)",
            fs / 2.0
        ));
    }
    if !(low_hz < high_hz) {
        return bad(format!("low edge {low_hz} Hz must be below high edge {high_hz} Hz"));
    }
    Ok(())
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl FilterSpec {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| s.poles().iter().all(|p| p.norm() < 1.0))
    }
}

/// Butterworth band-pass for a named rhythm.
pub fn design_bandpass(band: &BandSpec, fs: f64, order: usize) -> Result<FilterSpec> {
    band.validate(fs)?;
    design_bandpass_hz(band.low_hz, band.high_hz, fs, order)
}

/// Butterworth band-pass between arbitrary edges. `order` is the band-pass
/// order (twice the prototype order) and must be even.
pub fn design_bandpass_hz(low_hz: f64, high_hz: f64, fs: f64, order: usize) -> Result<FilterSpec> {
    validate_edges("bandpass", low_hz, high_hz, fs)?;
    if order < 2 || !order.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "band-pass order must be even and ≥ 2, got {order}"
        )));
    }
    let n = order / 2;
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let wl = warp(low_hz);
    let wh = warp(high_hz);
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let to_z = |s: Complex64| (2.0 * fs + s) / (2.0 * fs - s);
    let bp_pair = |p: Complex64| {
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        ((pb + disc) / 2.0, (pb - disc) / 2.0)
    };

    let mut pole_pairs: Vec<(Complex64, Complex64)> = Vec::with_capacity(n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        if p.im > 1e-12 {
            let (s1, s2) = bp_pair(p);
            let z1 = to_z(s1);
            let z2 = to_z(s2);
            pole_pairs.push((z1, z1.conj()));
            pole_pairs.push((z2, z2.conj()));
        } else if p.im.abs() <= 1e-12 {
            // Real prototype pole (odd prototype order): its two images form
            // one section, either a conjugate pair or two real poles.
            let (s1, s2) = bp_pair(Complex64::new(p.re, 0.0));
            pole_pairs.push((to_z(s1), to_z(s2)));
        }
    }
    debug_assert_eq!(pole_pairs.len(), n);

    let mut sections: Vec<Biquad> = pole_pairs
        .iter()
        .map(|&(p1, p2)| Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -(p1 + p2).re,
            a2: (p1 * p2).re,
        })
        .collect();

    let f0 = fs / PI * (w0_sq.sqrt() / (2.0 * fs)).atan();
    let mut spec = FilterSpec {
        sections: sections.clone(),
        order,
        low_hz,
        high_hz,
        fs,
    };
    let gain = spec.magnitude(f0);
    let per_section = gain.powf(-1.0 / n as f64);
    for s in &mut sections {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    spec.sections = sections;

    if !spec.is_stable() {
        return Err(Error::InvalidBand {
            name: "bandpass".into(),
            msg: format!("design for [{low_hz}, {high_hz}] Hz at fs={fs} produced an unstable section"),
        });
    }
    Ok(spec)
}

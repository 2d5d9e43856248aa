use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::butterworth::Rhythm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSignal {
    pub samples: Vec<Complex64>,
    pub band: Option<Rhythm>,
}

impl AnalyticSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.samples.iter().map(|c| c.norm()).collect()
    }
}

/// FFT construction: zero the negative-frequency half, double the positive
/// half, keep DC (and Nyquist for even lengths), invert. The real part is
/// the input itself.
pub fn analytic_signal(x: &[f64]) -> Result<AnalyticSignal> {
    let n = x.len();
    if n == 0 {
        return Err(Error::SignalTooShort { len: 0, min: 0 });
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);

    let half = n / 2;
    let positive_end = if n.is_multiple_of(2) { half } else { half + 1 };
    for c in &mut buf[1..positive_end] {
        *c *= 2.0;
    }
    for c in &mut buf[half + 1..] {
        *c = Complex64::new(0.0, 0.0);
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let samples = buf
        .iter()
        .zip(x)
        .map(|(c, &re)| Complex64::new(re, c.im * scale))
        .collect();
    Ok(AnalyticSignal { samples, band: None })
}

/// Per-sample argument in (−π, π].
pub fn instantaneous_phase(a: &AnalyticSignal) -> Result<Vec<f64>> {
    a.samples
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.re == 0.0 && c.im == 0.0 {
                return Err(Error::ZeroMagnitude(i));
            }
            let phi = c.im.atan2(c.re);
            Ok(if phi <= -PI { PI } else { phi })
        })
        .collect()
}

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dsp::{analytic_signal, design_bandpass, filtfilt, instantaneous_phase, BandSpec};
use crate::error::{Error, Result};
use crate::signal_io::LabeledWindow;

/// Resultant length of the phase difference `a − b`.
pub fn plv_from_phases(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("PLV over an empty phase segment"));
    }
    let sum: Complex64 = a.iter().zip(b).map(|(p, q)| Complex64::from_polar(1.0, p - q)).sum();
    Ok((sum.norm() / a.len() as f64).min(1.0))
}

/// Band-passes and phase-extracts each channel over the whole window, then
/// slices the phases into `parts` sub-windows and returns one symmetric
/// PLV matrix per sub-window.
pub fn plv_matrix(
    window: &LabeledWindow,
    band: &BandSpec,
    parts: usize,
    filter_order: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let (len, c) = window.samples.dim();
    if parts == 0 || len % parts != 0 {
        return Err(Error::NotDivisible { len, parts });
    }
    let filter = design_bandpass(band, window.fs, filter_order)?;
    let phases = (0..c)
        .map(|ch| {
            let x: Vec<f64> = window.samples.column(ch).to_vec();
            let y = filtfilt(&filter, &x)?;
            instantaneous_phase(&analytic_signal(&y)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let step = len / parts;
    (0..parts)
        .map(|t| {
            let r = t * step..(t + 1) * step;
            let mut m = DMatrix::<f64>::identity(c, c);
            for i in 0..c {
                for j in i + 1..c {
                    let v = plv_from_phases(&phases[i][r.clone()], &phases[j][r.clone()])?;
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            Ok(m)
        })
        .collect()
}

use super::butterworth::{Biquad, FilterSpec};
use crate::error::{Error, Result};

/// Edge padding length for [`filtfilt`].
pub fn pad_len(f: &FilterSpec) -> usize {
    3 * f.order
}

/// Steady-state transposed-direct-form-II state of each section for a unit
/// step input, scaled by the DC gain of the sections before it.
fn step_state(sections: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let y = s.dc_gain();
            let z2 = s.b2 - s.a2 * y;
            let z1 = s.b1 - s.a1 * y + z2;
            let zi = [z1 * scale, z2 * scale];
            scale *= y;
            zi
        })
        .collect()
}

fn sosfilt(sections: &[Biquad], x: &mut [f64], zi: &[[f64; 2]], x0: f64) {
    for (s, z) in sections.iter().zip(zi) {
        let (mut z1, mut z2) = (z[0] * x0, z[1] * x0);
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b0 * input + z1;
            z1 = s.b1 * input - s.a1 * y + z2;
            z2 = s.b2 * input - s.a2 * y;
            *v = y;
        }
    }
}

/// Zero-phase forward-backward filtering.
///
/// The signal is extended at both ends by odd reflection about its end
/// samples, and each pass starts from the steady state matching its first
/// sample so that slowly varying offsets do not ring into the output.
pub fn filtfilt(f: &FilterSpec, x: &[f64]) -> Result<Vec<f64>> {
    let pad = pad_len(f);
    let n = x.len();
    if n <= pad {
        return Err(Error::SignalTooShort { len: n, min: pad });
    }
    let first = x[0];
    let last = x[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

    let zi = step_state(&f.sections);
    let x0 = ext[0];
    sosfilt(&f.sections, &mut ext, &zi, x0);
    ext.reverse();
    let x0 = ext[0];
    sosfilt(&f.sections, &mut ext, &zi, x0);
    ext.reverse();

    Ok(ext[pad..pad + n].to_vec())
}

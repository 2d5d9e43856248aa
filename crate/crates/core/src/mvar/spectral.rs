use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;

use super::MvarModel;
use crate::error::{Error, Result};

pub const DEFAULT_N_FREQS: usize = 64;

const COND_LIMIT: f64 = 1e12;

/// Per-frequency `Ā(f) = I − A(f)`, `H(f) = Ā(f)⁻¹`, `S(f) = HΣHᴴ` and
/// `P(f) = ĀᴴΣ⁻¹Ā` on the grid `k·(fs/2)/n_freqs`, `k = 1..=n_freqs`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub freqs: Vec<f64>,
    pub abar: Vec<DMatrix<Complex64>>,
    pub h: Vec<DMatrix<Complex64>>,
    pub s: Vec<DMatrix<Complex64>>,
    pub p: Vec<DMatrix<Complex64>>,
    /// Σ actually used (after any diagonal jitter).
    pub sigma: DMatrix<f64>,
    pub jitter_applied: bool,
}

impl SpectralDecomposition {
    pub fn channels(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn n_freqs(&self) -> usize {
        self.freqs.len()
    }
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex::new(v, 0.0))
}

fn hermitian_part(m: DMatrix<Complex64>) -> DMatrix<Complex64> {
    let adj = m.adjoint();
    (m + adj).map(|v| v * 0.5)
}

/// Condition of `Ā(f)` measured against the identity it perturbs, so a
/// scalar model that vanishes at some frequency is still caught.
fn condition(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max().max(1.0);
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn spectral_decomposition(m: &MvarModel, n_freqs: usize) -> Result<SpectralDecomposition> {
    if n_freqs == 0 {
        return Err(Error::invalid("n_freqs must be ≥ 1"));
    }
    let c = m.channels();
    let mut sigma = m.sigma.clone();
    let eig = sigma.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let mut jitter_applied = false;
    if lo <= 0.0 || hi / lo > COND_LIMIT {
        let jitter = 1e-10 * sigma.trace() / c as f64;
        log::warn!("noise covariance ill-conditioned (eigenvalues {lo:e}..{hi:e}); adding {jitter:e} to its diagonal");
        for i in 0..c {
            sigma[(i, i)] += jitter;
        }
        jitter_applied = true;
    }
    let sigma_inv = sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("noise covariance".into()))?;
    let sigma_c = to_complex(&sigma);
    let sigma_inv_c = to_complex(&sigma_inv);
    let eye = DMatrix::<Complex64>::identity(c, c);

    let mut out = SpectralDecomposition {
        freqs: Vec::with_capacity(n_freqs),
        abar: Vec::with_capacity(n_freqs),
        h: Vec::with_capacity(n_freqs),
        s: Vec::with_capacity(n_freqs),
        p: Vec::with_capacity(n_freqs),
        sigma,
        jitter_applied,
    };

    for k in 1..=n_freqs {
        let f = k as f64 * (m.fs / 2.0) / n_freqs as f64;
        let mut af = DMatrix::<Complex64>::zeros(c, c);
        for (lag, a) in m.coeffs.iter().enumerate() {
            let w = Complex64::from_polar(1.0, -2.0 * PI * f * (lag + 1) as f64 / m.fs);
            af += a.map(|v| w * v);
        }
        let abar = &eye - af;
        let cond = condition(&abar);
        if !(cond <= COND_LIMIT) {
            return Err(Error::SingularAtFrequency { freq_hz: f, cond });
        }
        let h = abar
            .clone()
            .try_inverse()
            .ok_or(Error::SingularAtFrequency { freq_hz: f, cond })?;
        let s = hermitian_part(&h * &sigma_c * h.adjoint());
        let p = hermitian_part(abar.adjoint() * &sigma_inv_c * &abar);
        out.freqs.push(f);
        out.abar.push(abar);
        out.h.push(h);
        out.s.push(s);
        out.p.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_model_reduces_to_constants() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let m = MvarModel::new(vec![DMatrix::zeros(2, 2)], sigma, 256.0).unwrap();
        let sd = spectral_decomposition(&m, 64).unwrap();
        assert_eq!(sd.freqs.len(), 64);
        assert!((sd.freqs[0] - 2.0).abs() < 1e-12);
        assert!((sd.freqs[63] - 128.0).abs() < 1e-12);
        let want_s = [1.0, 4.0];
        let want_p = [1.0, 0.25];
        for k in 0..64 {
            for i in 0..2 {
                for j in 0..2 {
                    let d = if i == j { 1.0 } else { 0.0 };
                    assert!((sd.abar[k][(i, j)] - Complex64::new(d, 0.0)).norm() < 1e-15);
                    assert!((sd.h[k][(i, j)] - Complex64::new(d, 0.0)).norm() < 1e-15);
                    assert!((sd.s[k][(i, j)] - Complex64::new(d * want_s[i], 0.0)).norm() < 1e-15);
                    assert!((sd.p[k][(i, j)] - Complex64::new(d * want_p[i], 0.0)).norm() < 1e-15);
                }
            }
        }
        assert!(!sd.jitter_applied);
    }

    #[test]
    fn singular_transfer_matrix_names_frequency() {
        // A(1) = -1 gives Ā(fs/2) = 1 + e^{-jπ} = 0
        let m = MvarModel::new(vec![DMatrix::from_element(1, 1, -1.0)], DMatrix::identity(1, 1), 100.0).unwrap();
        match spectral_decomposition(&m, 8) {
            Err(Error::SingularAtFrequency { freq_hz, .. }) => assert!((freq_hz - 50.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_sigma_gets_jitter() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let m = MvarModel::new(vec![DMatrix::zeros(2, 2)], sigma, 10.0).unwrap();
        let sd = spectral_decomposition(&m, 4).unwrap();
        assert!(sd.jitter_applied);
    }
}
